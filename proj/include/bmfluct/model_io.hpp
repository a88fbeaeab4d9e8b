#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "bmfluct/spectral.hpp"

namespace bmfluct {

struct ModelFile {
    BranchingModel model;
    std::optional<EigenStructure> eigen;
};

namespace io_detail {

using nlohmann::json;

inline void reject_unknown(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw InputError(path, "expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!ok.count(it.key())) throw InputError(path.empty() ? it.key() : path + "." + it.key(), "unknown field");
}

inline const json& require(const json& obj, const std::string& key, const std::string& path) {
    auto it = obj.find(key);
    if (it == obj.end()) throw InputError(path.empty() ? key : path + "." + key, "missing required field");
    return *it;
}

inline std::string at(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

inline double number(const json& v, const std::string& path) {
    if (!v.is_number()) throw InputError(path, "expected a number");
    return v.get<double>();
}

inline const json& array(const json& v, const std::string& path) {
    if (!v.is_array()) throw InputError(path, "expected an array");
    return v;
}

inline cplx complex_entry(const json& v, const std::string& path) {
    if (v.is_number()) return v.get<double>();
    if (v.is_array() && v.size() == 2) return {number(v[0], at(path, 0)), number(v[1], at(path, 1))};
    throw InputError(path, "expected a number or a [re, im] pair");
}

inline CVec complex_vector(const json& v, const std::string& path) {
    array(v, path);
    CVec out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = complex_entry(v[i], at(path, i));
    return out;
}

inline json complex_to_json(cplx z) {
    if (z.imag() == 0.0) return z.real();
    return json::array({z.real(), z.imag()});
}

inline json vector_to_json(const CVec& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(complex_to_json(v(i)));
    return out;
}

inline std::vector<Chain> chains_from(const json& v, const std::string& path) {
    std::vector<Chain> out;
    array(v, path);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto pi = at(path, i);
        Chain c;
        array(v[i], pi);
        for (std::size_t j = 0; j < v[i].size(); ++j) {
            const auto pj = at(pi, j);
            array(v[i][j], pj);
            std::vector<CVec> rank;
            for (std::size_t k = 0; k < v[i][j].size(); ++k) rank.push_back(complex_vector(v[i][j][k], at(pj, k)));
            c.push_back(std::move(rank));
        }
        out.push_back(std::move(c));
    }
    return out;
}

inline json chains_to_json(const std::vector<Chain>& chains) {
    json out = json::array();
    for (const auto& c : chains) {
        json ranks = json::array();
        for (const auto& r : c) {
            json vs = json::array();
            for (const auto& v : r) vs.push_back(vector_to_json(v));
            ranks.push_back(vs);
        }
        out.push_back(ranks);
    }
    return out;
}

inline EigenStructure eigen_from(const json& e) {
    reject_unknown(e, "eigen", {"eigenvalues", "chains", "duals", "chain_links"});
    EigenStructure es;
    const auto& ev = array(require(e, "eigenvalues", "eigen"), "eigen.eigenvalues");
    for (std::size_t i = 0; i < ev.size(); ++i) es.lambda.push_back(complex_entry(ev[i], at("eigen.eigenvalues", i)));
    es.chains = chains_from(require(e, "chains", "eigen"), "eigen.chains");
    es.duals = chains_from(require(e, "duals", "eigen"), "eigen.duals");
    if (auto it = e.find("chain_links"); it != e.end()) {
        array(*it, "eigen.chain_links");
        for (std::size_t n = 0; n < it->size(); ++n) {
            const auto p = at("eigen.chain_links", n);
            const auto& l = (*it)[n];
            reject_unknown(l, p, {"i", "j", "k", "kstar"});
            auto idx = [&](const char* key) {
                const auto& v = require(l, key, p);
                if (!v.is_number_integer() || v.get<int>() < 1) throw InputError(p + "." + key, "expected an index >= 1");
                return v.get<int>() - 1;
            };
            es.links[{idx("i"), idx("j"), idx("k")}] = idx("kstar");
        }
    }
    return es;
}

inline std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

}  // namespace io_detail

inline ModelFile parse_model(const std::string& text) {
    using io_detail::json;
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        const auto [line, col] = io_detail::line_column(text, e.byte > 0 ? e.byte - 1 : 0);
        throw InputError("", "parse error at line " + std::to_string(line) + ", column " + std::to_string(col) +
                                 ": " + e.what());
    }
    io_detail::reject_unknown(root, "", {"types", "q", "gamma", "offspring", "eigen"});

    ModelFile mf;
    auto& m = mf.model;
    const auto& types = io_detail::array(io_detail::require(root, "types", ""), "types");
    for (std::size_t i = 0; i < types.size(); ++i) {
        if (!types[i].is_string()) throw InputError(io_detail::at("types", i), "expected a string label");
        m.types.labels.push_back(types[i].get<std::string>());
    }
    const auto d = static_cast<Eigen::Index>(m.types.size());

    const auto& q = io_detail::array(io_detail::require(root, "q", ""), "q");
    m.motion.q = RMat::Zero(static_cast<Eigen::Index>(q.size()), d);
    for (std::size_t x = 0; x < q.size(); ++x) {
        const auto px = io_detail::at("q", x);
        const auto& row = io_detail::array(q[x], px);
        if (static_cast<Eigen::Index>(row.size()) != d)
            throw InputError(px, "expected " + std::to_string(d) + " entries, got " + std::to_string(row.size()));
        for (std::size_t y = 0; y < row.size(); ++y)
            m.motion.q(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)) =
                io_detail::number(row[y], io_detail::at(px, y));
    }

    const auto& g = io_detail::array(io_detail::require(root, "gamma", ""), "gamma");
    m.gamma.resize(static_cast<Eigen::Index>(g.size()));
    for (std::size_t x = 0; x < g.size(); ++x)
        m.gamma(static_cast<Eigen::Index>(x)) = io_detail::number(g[x], io_detail::at("gamma", x));

    const auto& off = io_detail::array(io_detail::require(root, "offspring", ""), "offspring");
    for (std::size_t x = 0; x < off.size(); ++x) {
        const auto px = io_detail::at("offspring", x);
        const auto& outs = io_detail::array(off[x], px);
        std::vector<OffspringOutcome> list;
        for (std::size_t o = 0; o < outs.size(); ++o) {
            const auto po = io_detail::at(px, o);
            io_detail::reject_unknown(outs[o], po, {"probability", "children"});
            OffspringOutcome oc;
            oc.probability = io_detail::number(io_detail::require(outs[o], "probability", po), po + ".probability");
            const auto& ch = io_detail::array(io_detail::require(outs[o], "children", po), po + ".children");
            for (std::size_t y = 0; y < ch.size(); ++y) {
                if (!ch[y].is_number_integer())
                    throw InputError(io_detail::at(po + ".children", y), "expected an integer count");
                oc.children.push_back(ch[y].get<int>());
            }
            list.push_back(std::move(oc));
        }
        m.offspring.per_type.push_back(std::move(list));
    }
    detail::check_structure(m);
    if (auto it = root.find("eigen"); it != root.end()) mf.eigen = io_detail::eigen_from(*it);
    return mf;
}

inline ModelFile load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("", "cannot open model file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_model(ss.str());
}

inline std::string serialize_model(const BranchingModel& m, const std::optional<EigenStructure>& eigen = std::nullopt) {
    using io_detail::json;
    json root;
    root["types"] = m.types.labels;
    json q = json::array();
    for (Eigen::Index x = 0; x < m.motion.q.rows(); ++x) {
        json row = json::array();
        for (Eigen::Index y = 0; y < m.motion.q.cols(); ++y) row.push_back(m.motion.q(x, y));
        q.push_back(row);
    }
    root["q"] = q;
    root["gamma"] = std::vector<double>(m.gamma.data(), m.gamma.data() + m.gamma.size());
    json off = json::array();
    for (const auto& outs : m.offspring.per_type) {
        json list = json::array();
        for (const auto& o : outs) list.push_back({{"probability", o.probability}, {"children", o.children}});
        off.push_back(list);
    }
    root["offspring"] = off;
    if (eigen) {
        json e;
        json ev = json::array();
        for (auto l : eigen->lambda) ev.push_back(json::array({l.real(), l.imag()}));
        e["eigenvalues"] = ev;
        e["chains"] = io_detail::chains_to_json(eigen->chains);
        e["duals"] = io_detail::chains_to_json(eigen->duals);
        json links = json::array();
        for (const auto& [key, ks] : eigen->links)
            links.push_back({{"i", key[0] + 1}, {"j", key[1] + 1}, {"k", key[2] + 1}, {"kstar", ks + 1}});
        e["chain_links"] = links;
        root["eigen"] = e;
    }
    return root.dump(2) + "\n";
}

}  // namespace bmfluct
