#ifndef CURVEREG_IO_HPP
#define CURVEREG_IO_HPP

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "curvereg/error.hpp"
#include "curvereg/model.hpp"
#include "curvereg/saem.hpp"
#include "curvereg/splines.hpp"

namespace curvereg {

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return false;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

/// Reads long-format CSV (header `curve_id,t,y`). Each curve's times are
/// sorted and mapped affinely onto [0,1]. `source` names the input in errors.
inline Dataset read_csv(std::istream& in, const std::string& source = "<input>") {
    std::string line;
    long line_no = 0;
    if (!std::getline(in, line)) throw Error(ErrorCode::parse, source + ": empty file");
    ++line_no;
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
    {
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.emplace_back(detail::trim(c));
        if (cols != std::vector<std::string>{"curve_id", "t", "y"}) {
            throw Error(ErrorCode::parse, source + ":1: header must be 'curve_id,t,y'");
        }
    }

    struct Row {
        double t, y;
        long line;
    };
    std::vector<std::string> order;
    std::map<std::string, std::vector<Row>> groups;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        std::vector<std::string_view> fields;
        std::string_view rest(line);
        for (;;) {
            const auto pos = rest.find(',');
            fields.push_back(rest.substr(0, pos));
            if (pos == std::string_view::npos) break;
            rest.remove_prefix(pos + 1);
        }
        const std::string where = source + ":" + std::to_string(line_no);
        if (fields.size() != 3) throw Error(ErrorCode::parse, where + ": expected 3 fields, got " + std::to_string(fields.size()));
        const std::string id(detail::trim(fields[0]));
        if (id.empty()) throw Error(ErrorCode::parse, where + ": empty curve_id");
        Row r{0.0, 0.0, line_no};
        if (!detail::parse_double(fields[1], r.t)) throw Error(ErrorCode::parse, where + ": non-numeric t");
        if (!detail::parse_double(fields[2], r.y)) throw Error(ErrorCode::parse, where + ": non-numeric y");
        auto [it, inserted] = groups.try_emplace(id);
        if (inserted) order.push_back(id);
        it->second.push_back(r);
    }
    if (order.empty()) throw Error(ErrorCode::parse, source + ": no data rows");

    std::vector<Curve> curves;
    for (const auto& id : order) {
        auto& rows = groups[id];
        std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
        for (std::size_t j = 1; j < rows.size(); ++j) {
            if (rows[j].t == rows[j - 1].t) {
                throw Error(ErrorCode::parse, source + ":" + std::to_string(std::max(rows[j].line, rows[j - 1].line)) +
                                                  ": duplicate t for curve '" + id + "'");
            }
        }
        if (rows.size() < 2) {
            throw Error(ErrorCode::parse, source + ":" + std::to_string(rows.front().line) + ": curve '" + id +
                                              "' has a single time point and cannot be rescaled");
        }
        const double t0 = rows.front().t;
        const double span = rows.back().t - t0;
        Curve c;
        c.id = id;
        c.ts.resize(static_cast<Eigen::Index>(rows.size()));
        c.ys.resize(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t j = 0; j < rows.size(); ++j) {
            const auto e = static_cast<Eigen::Index>(j);
            c.ts[e] = std::clamp((rows[j].t - t0) / span, 0.0, 1.0);
            c.ys[e] = rows[j].y;
        }
        c.ts[0] = 0.0;
        c.ts[c.ts.size() - 1] = 1.0;
        curves.push_back(std::move(c));
    }
    return Dataset(std::move(curves));
}

inline Dataset ingest_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open '" + path + "'");
    return read_csv(in, path);
}

inline void write_csv(std::ostream& os, const Dataset& data) {
    os << "curve_id,t,y\n";
    for (const auto& c : data.curves()) {
        for (Eigen::Index j = 0; j < c.size(); ++j) {
            os << c.id << ',' << detail::format_double(c.ts[j]) << ',' << detail::format_double(c.ys[j]) << '\n';
        }
    }
}

// --- JSON ------------------------------------------------------------------------

inline nlohmann::json to_json(const Vector& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Vector vector_from_json(const nlohmann::json& j) {
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
    return v;
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(to_json(Vector(m.row(r).transpose())));
    return a;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows > 0 ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) m.row(r) = vector_from_json(j.at(static_cast<std::size_t>(r))).transpose();
    return m;
}

inline nlohmann::json to_json(const ModelParams& p) {
    return {{"alpha", to_json(p.alpha)},
            {"sigma2", p.sigma2},
            {"Sigma", matrix_to_json(p.Sigma)},
            {"tau", p.tau},
            {"kappa0", to_json(p.kappa0)},
            {"mu0", {0.0, 1.0}}};
}

inline ModelParams params_from_json(const nlohmann::json& j) {
    ModelParams p;
    p.alpha = vector_from_json(j.at("alpha"));
    p.sigma2 = j.at("sigma2").get<double>();
    p.Sigma = matrix_from_json(j.at("Sigma"));
    p.tau = j.at("tau").get<double>();
    p.kappa0 = vector_from_json(j.at("kappa0"));
    return p;
}

inline nlohmann::json to_json(const BasisSpec& b) { return {{"num_basis", b.num_basis()}, {"order", b.order}}; }

inline BasisSpec basis_from_json(const nlohmann::json& j) {
    return make_basis(j.at("num_basis").get<int>(), j.at("order").get<int>());
}

inline nlohmann::json to_json(const SufficientStats& s) {
    return {{"S_yy", s.yy}, {"S_By", to_json(s.By)}, {"S_BB", matrix_to_json(s.BB)},
            {"S_a", matrix_to_json(s.a)}, {"S_w", to_json(s.w)}};
}

/// Everything needed to predict from or cluster a saved fit.
inline nlohmann::json to_json(const FitResult& f) {
    nlohmann::json curves = nlohmann::json::array();
    for (const auto& c : f.curves) {
        curves.push_back({{"id", c.id},
                          {"mean_w", to_json(c.mean_w)},
                          {"mean_shift", c.mean_shift},
                          {"mean_scaled_basis", matrix_to_json(c.mean_scaled_basis)},
                          {"acceptance_rate", c.acceptance_rate()},
                          {"accepted", c.accepted_after_burn_in},
                          {"proposed", c.proposed_after_burn_in},
                          {"sigma_q", c.sigma_q}});
    }
    return {{"theta", to_json(f.theta)},
            {"basis_f", to_json(f.basis_f)},
            {"basis_h", to_json(f.basis_h)},
            {"pred_grid_size", f.pred_grid.size()},
            {"n_tot", f.n_tot},
            {"curves", curves}};
}

inline FitResult fit_from_json(const nlohmann::json& j) {
    FitResult f;
    f.theta = params_from_json(j.at("theta"));
    f.basis_f = basis_from_json(j.at("basis_f"));
    f.basis_h = basis_from_json(j.at("basis_h"));
    f.pred_grid = uniform_grid(j.at("pred_grid_size").get<int>());
    f.n_tot = j.at("n_tot").get<long>();
    for (const auto& c : j.at("curves")) {
        CurveFit cf;
        cf.id = c.at("id").get<std::string>();
        cf.mean_w = vector_from_json(c.at("mean_w"));
        cf.mean_shift = c.at("mean_shift").get<double>();
        cf.mean_scaled_basis = matrix_from_json(c.at("mean_scaled_basis"));
        cf.accepted_after_burn_in = c.at("accepted").get<long>();
        cf.proposed_after_burn_in = c.at("proposed").get<long>();
        cf.sigma_q = c.at("sigma_q").get<double>();
        if (cf.mean_scaled_basis.rows() != f.pred_grid.size() ||
            cf.mean_scaled_basis.cols() != f.basis_f.num_basis() || cf.mean_w.size() != f.basis_h.num_basis() - 1) {
            throw Error(ErrorCode::parse, "fit file: curve '" + cf.id + "' has inconsistent dimensions");
        }
        f.curves.push_back(std::move(cf));
    }
    f.theta.validate();
    return f;
}

inline nlohmann::json truth_to_json(const Dataset& data, const std::vector<CurveEffects>& truth) {
    nlohmann::json curves = nlohmann::json::array();
    for (std::size_t i = 0; i < truth.size(); ++i) {
        curves.push_back({{"id", data[i].id},
                          {"a_sh", truth[i].a.shift},
                          {"a_sc", truth[i].a.scale},
                          {"w", to_json(truth[i].w.increments)}});
    }
    return curves;
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::parse, path + ": " + e.what());
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write '" + path + "'");
    out << text;
    if (!out) throw Error(ErrorCode::io, "write failed for '" + path + "'");
}

}  // namespace curvereg

#endif
