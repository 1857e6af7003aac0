#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "oodd/dataset.hpp"
#include "oodd/errors.hpp"
#include "oodd/rollout.hpp"

// Model checkpoints: a JSON document listing layer names, shapes, and
// row-major values. Doubles are stored as 17-significant-digit strings so a
// save/load round trip is bit-exact.

namespace oodd {
namespace detail {

using nlohmann::json;

inline json double_to_json(double v) { return json(format_double(v)); }

inline double double_from_json(const json& j, const char* what) {
    if (!j.is_string()) throw CorruptRecord(std::string(what) + ": expected a number string");
    const std::string& s = j.get_ref<const std::string&>();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') {
        throw CorruptRecord(std::string(what) + ": unparseable value '" + s + "'");
    }
    return v;
}

inline json doubles_to_json(const std::vector<double>& v) {
    json out = json::array();
    for (double x : v) out.push_back(format_double(x));
    return out;
}

inline std::vector<double> doubles_from_json(const json& j, const char* what) {
    if (!j.is_array()) throw CorruptRecord(std::string(what) + ": expected an array");
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& e : j) out.push_back(double_from_json(e, what));
    return out;
}

inline json tensor_to_json(const Tensor2& t) {
    json out;
    out["rows"] = t.rows;
    out["cols"] = t.cols;
    out["data"] = doubles_to_json(t.data);
    return out;
}

inline Tensor2 tensor_from_json(const json& j, const char* what) {
    Tensor2 t(j.at("rows").get<int>(), j.at("cols").get<int>());
    const auto data = doubles_from_json(j.at("data"), what);
    if (data.size() != t.size()) {
        throw CorruptRecord(std::string(what) + ": data length does not match shape");
    }
    t.data = data;
    return t;
}

inline json linear_to_json(const Linear& l) {
    json out;
    out["w"] = tensor_to_json(l.weight.w);
    out["b"] = tensor_to_json(l.bias.w);
    return out;
}

inline Linear linear_from_json(const json& j, const char* what) {
    Linear l;
    l.weight = AdamParam(0, 0);
    l.bias = AdamParam(0, 0);
    l.weight.w = tensor_from_json(j.at("w"), what);
    l.bias.w = tensor_from_json(j.at("b"), what);
    const int in = l.weight.w.rows, out_dim = l.weight.w.cols;
    l.weight.g = Tensor2(in, out_dim);
    l.weight.m = Tensor2(in, out_dim);
    l.weight.v = Tensor2(in, out_dim);
    l.bias.g = Tensor2(1, out_dim);
    l.bias.m = Tensor2(1, out_dim);
    l.bias.v = Tensor2(1, out_dim);
    return l;
}

inline json gru_to_json(const GruCell& g) {
    json out;
    out["w_ih"] = tensor_to_json(g.w_ih.w);
    out["w_hh"] = tensor_to_json(g.w_hh.w);
    out["b_ih"] = tensor_to_json(g.b_ih.w);
    out["b_hh"] = tensor_to_json(g.b_hh.w);
    return out;
}

inline GruCell gru_from_json(const json& j, const char* what) {
    GruCell g;
    auto load = [&](const char* key, AdamParam& p) {
        p.w = tensor_from_json(j.at(key), what);
        p.g = Tensor2(p.w.rows, p.w.cols);
        p.m = Tensor2(p.w.rows, p.w.cols);
        p.v = Tensor2(p.w.rows, p.w.cols);
    };
    load("w_ih", g.w_ih);
    load("w_hh", g.w_hh);
    load("b_ih", g.b_ih);
    load("b_hh", g.b_hh);
    g.input = g.w_ih.w.rows;
    g.hidden = g.w_hh.w.rows;
    return g;
}

inline json head_to_json(const QuantileHead& h) {
    json out;
    out["emb"] = linear_to_json(h.emb);
    out["fc2"] = linear_to_json(h.fc2);
    out["fc3"] = linear_to_json(h.fc3);
    return out;
}

inline QuantileHead head_from_json(const json& j, const char* what) {
    QuantileHead h;
    h.emb = linear_from_json(j.at("emb"), what);
    h.fc2 = linear_from_json(j.at("fc2"), what);
    h.fc3 = linear_from_json(j.at("fc3"), what);
    return h;
}

inline json trunk_to_json(const RecurrentTrunk& t) {
    json out;
    out["fc1"] = linear_to_json(t.fc1);
    out["gru"] = gru_to_json(t.gru);
    return out;
}

inline RecurrentTrunk trunk_from_json(const json& j, const char* what) {
    RecurrentTrunk t;
    t.fc1 = linear_from_json(j.at("fc1"), what);
    t.gru = gru_from_json(j.at("gru"), what);
    return t;
}

inline json tree_to_json(const RegressionTree& tree) {
    json nodes = json::array();
    for (const TreeNode& n : tree.nodes) {
        json e = json::array();
        e.push_back(n.feature);
        e.push_back(format_double(n.threshold));
        e.push_back(n.left);
        e.push_back(n.right);
        e.push_back(format_double(n.value));
        nodes.push_back(std::move(e));
    }
    return nodes;
}

inline RegressionTree tree_from_json(const json& j, const char* what) {
    RegressionTree tree;
    for (const auto& e : j) {
        if (!e.is_array() || e.size() != 5) {
            throw CorruptRecord(std::string(what) + ": malformed tree node");
        }
        TreeNode n;
        n.feature = e.at(0).get<int>();
        n.threshold = double_from_json(e.at(1), what);
        n.left = e.at(2).get<int>();
        n.right = e.at(3).get<int>();
        n.value = double_from_json(e.at(4), what);
        tree.nodes.push_back(n);
    }
    if (tree.nodes.empty()) throw CorruptRecord(std::string(what) + ": empty tree");
    return tree;
}

inline json meta_to_json(const ModelMeta& m) {
    json out;
    out["env"] = env_name(m.env);
    out["d"] = m.d;
    out["hidden"] = m.hidden;
    out["window"] = m.window;
    out["lr"] = format_double(m.lr);
    out["seed"] = m.seed;
    out["feature_means"] = doubles_to_json(m.feature_means);
    out["feature_stds"] = doubles_to_json(m.feature_stds);
    out["val_losses"] = doubles_to_json(m.val_losses);
    return out;
}

inline ModelMeta meta_from_json(const json& j) {
    ModelMeta m;
    m.env = parse_env(j.at("env").get<std::string>());
    m.d = j.at("d").get<int>();
    m.hidden = j.at("hidden").get<int>();
    m.window = j.at("window").get<int>();
    m.lr = double_from_json(j.at("lr"), "meta.lr");
    m.seed = j.at("seed").get<uint64_t>();
    m.feature_means = doubles_from_json(j.at("feature_means"), "meta.feature_means");
    m.feature_stds = doubles_from_json(j.at("feature_stds"), "meta.feature_stds");
    m.val_losses = doubles_from_json(j.at("val_losses"), "meta.val_losses");
    return m;
}

}  // namespace detail

inline void save_model(const AnyModel& model, const std::filesystem::path& path) {
    using detail::json;
    json doc;
    doc["format"] = "oodd-model";
    doc["version"] = 1;
    doc["model"] = model_name(model_kind(model));
    doc["meta"] = detail::meta_to_json(model_meta(model));
    json nets = json::array();
    if (const auto* m = std::get_if<RiqnModel>(&model)) {
        for (const auto& net : m->nets) {
            json e;
            e["trunk"] = detail::trunk_to_json(net.trunk);
            e["head"] = detail::head_to_json(net.head);
            nets.push_back(std::move(e));
        }
    } else if (const auto* m = std::get_if<NpnModel>(&model)) {
        for (const auto& net : m->nets) {
            json e;
            e["trunk"] = detail::trunk_to_json(net.trunk);
            e["out"] = detail::linear_to_json(net.out);
            nets.push_back(std::move(e));
        }
    } else if (const auto* m = std::get_if<NriqnModel>(&model)) {
        for (const auto& net : m->nets) {
            json e;
            e["fc1"] = detail::linear_to_json(net.fc1);
            e["head"] = detail::head_to_json(net.head);
            nets.push_back(std::move(e));
        }
    } else if (const auto* m = std::get_if<ForestModel>(&model)) {
        json fc;
        fc["n_trees"] = m->forest_cfg.n_trees;
        fc["max_depth"] = m->forest_cfg.max_depth;
        fc["min_leaf"] = m->forest_cfg.min_leaf;
        fc["bootstrap"] = m->forest_cfg.bootstrap;
        fc["mtry"] = m->forest_cfg.mtry;
        fc["sample_cap"] = m->forest_cfg.sample_cap;
        fc["seed"] = m->forest_cfg.seed;
        doc["forest_cfg"] = std::move(fc);
        for (const auto& forest : m->forests) {
            json trees = json::array();
            for (const auto& tree : forest.trees) trees.push_back(detail::tree_to_json(tree));
            nets.push_back(std::move(trees));
        }
    }
    doc["nets"] = std::move(nets);

    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << doc.dump() << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

inline AnyModel load_model(const std::filesystem::path& path) {
    using detail::json;
    std::ifstream in(path);
    if (!in) throw MissingArtifact(path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw CorruptRecord(path.string() + ": " + e.what());
    }
    try {
        if (doc.at("format").get<std::string>() != "oodd-model") {
            throw CorruptRecord(path.string() + ": not a model checkpoint");
        }
        const ModelKind kind = parse_model(doc.at("model").get<std::string>());
        const ModelMeta meta = detail::meta_from_json(doc.at("meta"));
        const json& nets = doc.at("nets");
        if (static_cast<int>(nets.size()) != meta.d) {
            throw CorruptRecord(path.string() + ": expected one net per feature");
        }
        switch (kind) {
            case ModelKind::Riqn: {
                RiqnModel m;
                m.meta = meta;
                for (const auto& e : nets) {
                    RiqnNet net;
                    net.trunk = detail::trunk_from_json(e.at("trunk"), "riqn.trunk");
                    net.head = detail::head_from_json(e.at("head"), "riqn.head");
                    m.nets.push_back(std::move(net));
                }
                return m;
            }
            case ModelKind::Npn: {
                NpnModel m;
                m.meta = meta;
                for (const auto& e : nets) {
                    NpnNet net;
                    net.trunk = detail::trunk_from_json(e.at("trunk"), "npn.trunk");
                    net.out = detail::linear_from_json(e.at("out"), "npn.out");
                    m.nets.push_back(std::move(net));
                }
                return m;
            }
            case ModelKind::Nriqn: {
                NriqnModel m;
                m.meta = meta;
                for (const auto& e : nets) {
                    NriqnNet net;
                    net.fc1 = detail::linear_from_json(e.at("fc1"), "nriqn.fc1");
                    net.head = detail::head_from_json(e.at("head"), "nriqn.head");
                    m.nets.push_back(std::move(net));
                }
                return m;
            }
            case ModelKind::Forest: {
                ForestModel m;
                m.meta = meta;
                const json& fc = doc.at("forest_cfg");
                m.forest_cfg.n_trees = fc.at("n_trees").get<int>();
                m.forest_cfg.max_depth = fc.at("max_depth").get<int>();
                m.forest_cfg.min_leaf = fc.at("min_leaf").get<int>();
                m.forest_cfg.bootstrap = fc.at("bootstrap").get<bool>();
                m.forest_cfg.mtry = fc.at("mtry").get<int>();
                m.forest_cfg.sample_cap = fc.at("sample_cap").get<int>();
                m.forest_cfg.seed = fc.at("seed").get<uint64_t>();
                for (const auto& trees : nets) {
                    Forest forest;
                    for (const auto& tree : trees) {
                        forest.trees.push_back(detail::tree_from_json(tree, "forest.tree"));
                    }
                    m.forests.push_back(std::move(forest));
                }
                return m;
            }
        }
        throw CorruptRecord(path.string() + ": unknown model kind");
    } catch (const json::exception& e) {
        throw CorruptRecord(path.string() + ": " + e.what());
    }
}

}  // namespace oodd
