#pragma once

#include <stdexcept>
#include <string>

namespace oodd {

struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Simulation
struct StepAfterDone : Error {
    StepAfterDone() : Error("step() called on a terminated state") {}
};
struct UnsupportedEnv : Error {
    explicit UnsupportedEnv(const std::string& what) : Error("unsupported environment: " + what) {}
};

// Anomaly transforms
struct WrongKind : Error {
    explicit WrongKind(const std::string& what) : Error("wrong anomaly kind: " + what) {}
};

// Numerics
struct ShapeMismatch : Error {
    explicit ShapeMismatch(const std::string& what) : Error("shape mismatch: " + what) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error("numeric error: " + what) {}
};
struct DivergedTraining : Error {
    explicit DivergedTraining(const std::string& what) : Error("training diverged: " + what) {}
};
struct HistoryTooShort : Error {
    explicit HistoryTooShort(const std::string& what) : Error("history too short: " + what) {}
};

// Persistence
struct IoError : Error {
    explicit IoError(const std::string& what) : Error("io error: " + what) {}
};
struct ManifestMismatch : Error {
    explicit ManifestMismatch(const std::string& what) : Error("manifest mismatch: " + what) {}
};
struct CorruptRecord : Error {
    explicit CorruptRecord(const std::string& what) : Error("corrupt record: " + what) {}
};

// Metrics
struct SingleClass : Error {
    SingleClass() : Error("series contains a single label class") {}
};
struct EmptyDataset : Error {
    explicit EmptyDataset(const std::string& what) : Error("empty dataset: " + what) {}
};
struct EmptySet : Error {
    explicit EmptySet(const std::string& what) : Error("empty set: " + what) {}
};

// Orchestration
struct ConfigError : Error {
    explicit ConfigError(const std::string& field, const std::string& what)
        : Error("config error at '" + field + "': " + what) {}
};
struct MissingArtifact : Error {
    explicit MissingArtifact(const std::string& path)
        : Error("missing artifact: " + path), path(path) {}
    std::string path;
};

}  // namespace oodd
