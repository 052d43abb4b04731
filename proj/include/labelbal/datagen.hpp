#pragma once

// Synthetic multi-label data with controllable label means and directed
// co-occurrence rules, CSV ingestion, and per-attribute label statistics.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "labelbal/error.hpp"
#include "labelbal/numkit.hpp"

namespace labelbal {

struct LabelMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> data;

    LabelMatrix() = default;
    LabelMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}
    LabelMatrix(std::initializer_list<std::initializer_list<int>> init) {
        rows = init.size();
        cols = rows ? init.begin()->size() : 0;
        for (const auto& r : init) {
            require_shape(r.size() == cols, "ragged label rows");
            for (int v : r) {
                data.push_back(static_cast<std::uint8_t>(v));
            }
        }
    }

    std::uint8_t& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    std::uint8_t operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<const std::uint8_t> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    friend bool operator==(const LabelMatrix&, const LabelMatrix&) = default;
};

struct Dataset {
    Matrix X;      // N x D
    LabelMatrix Y; // N x C
    std::vector<std::string> attribute_names;

    std::size_t size() const { return X.rows; }
    std::size_t input_dim() const { return X.cols; }
    std::size_t num_attributes() const { return Y.cols; }

    Dataset subset(std::span<const std::size_t> indices) const {
        Dataset out;
        out.X = Matrix(indices.size(), X.cols);
        out.Y = LabelMatrix(indices.size(), Y.cols);
        out.attribute_names = attribute_names;
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const auto src = X.row(indices[i]);
            std::copy(src.begin(), src.end(), out.X.row(i).begin());
            for (std::size_t k = 0; k < Y.cols; ++k) {
                out.Y(i, k) = Y(indices[i], k);
            }
        }
        return out;
    }
};

inline std::vector<std::string> default_attribute_names(std::size_t C) {
    std::vector<std::string> names;
    for (std::size_t k = 0; k < C; ++k) {
        names.push_back("attr_" + std::to_string(k));
    }
    return names;
}

// ---------------------------------------------------------------------------
// generation

/// Label of `target` copies label of `source` with probability rho.
struct CooccurrenceRule {
    std::size_t source = 0;
    std::size_t target = 0;
    double rho = 0.0;
};

struct GenConfig {
    std::size_t N = 20000;
    std::size_t D = 32;
    std::size_t C = 8;
    std::vector<double> target_means{0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.5};
    std::vector<CooccurrenceRule> co_occurrence_rules{{0, 1, 0.9}};
    double prototype_scale = 1.0;
    double noise_sigma = 0.5;
    std::uint64_t seed = 0;
};

/// Attribute draw order such that every rule source precedes its target.
/// Throws config.cyclic_rules when the rule graph has a cycle.
inline std::vector<std::size_t> rule_order(const GenConfig& cfg) {
    std::vector<int> rule_of(cfg.C, -1);
    for (std::size_t r = 0; r < cfg.co_occurrence_rules.size(); ++r) {
        rule_of[cfg.co_occurrence_rules[r].target] = static_cast<int>(r);
    }
    std::vector<int> state(cfg.C, 0); // 0 new, 1 visiting, 2 done
    std::vector<std::size_t> order;
    std::function<void(std::size_t)> visit = [&](std::size_t k) {
        if (state[k] == 2) {
            return;
        }
        if (state[k] == 1) {
            fail(ErrorKind::config, "config.cyclic_rules", "co-occurrence rules form a cycle through attribute " + std::to_string(k));
        }
        state[k] = 1;
        if (rule_of[k] >= 0) {
            visit(cfg.co_occurrence_rules[static_cast<std::size_t>(rule_of[k])].source);
        }
        state[k] = 2;
        order.push_back(k);
    };
    for (std::size_t k = 0; k < cfg.C; ++k) {
        visit(k);
    }
    return order;
}

inline void validate(const GenConfig& cfg) {
    auto bad = [](const std::string& code, const std::string& msg) { fail(ErrorKind::config, code, msg); };
    if (cfg.N < 1 || cfg.C < 1) {
        bad("config.empty", "N and C must be positive");
    }
    if (cfg.D < cfg.C) {
        bad("config.dimension", "D must be at least C");
    }
    if (cfg.target_means.size() != cfg.C) {
        bad("config.target_means", "target_means must have C entries");
    }
    for (double m : cfg.target_means) {
        if (!(m > 0.0 && m < 1.0)) {
            bad("config.target_means", "target means must lie in (0, 1)");
        }
    }
    if (!(cfg.noise_sigma >= 0.0) || !std::isfinite(cfg.prototype_scale)) {
        bad("config.scale", "noise_sigma must be >= 0 and prototype_scale finite");
    }
    std::vector<bool> targeted(cfg.C, false);
    for (const auto& r : cfg.co_occurrence_rules) {
        if (r.source >= cfg.C || r.target >= cfg.C || r.source == r.target) {
            bad("config.rule_index", "co-occurrence rule references an invalid attribute pair");
        }
        if (!(r.rho >= 0.0 && r.rho <= 1.0)) {
            bad("config.rule_rho", "co-occurrence probability must lie in [0, 1]");
        }
        if (targeted[r.target]) {
            bad("config.duplicate_rule_target", "attribute " + std::to_string(r.target) + " is the target of two rules");
        }
        targeted[r.target] = true;
    }
    rule_order(cfg);
}

/// Fixed unit-norm prototype directions, one per attribute (C x D).
inline Matrix attribute_prototypes(const GenConfig& cfg) {
    RngStream rng(cfg.seed, Stream::prototypes);
    Matrix P(cfg.C, cfg.D);
    for (std::size_t k = 0; k < cfg.C; ++k) {
        auto row = P.row(k);
        for (auto& v : row) {
            v = rng.normal();
        }
        const double n = norm2(row);
        for (auto& v : row) {
            v /= n;
        }
    }
    return P;
}

inline Dataset generate_synthetic(const GenConfig& cfg) {
    validate(cfg);
    const auto order = rule_order(cfg);
    std::vector<int> rule_of(cfg.C, -1);
    for (std::size_t r = 0; r < cfg.co_occurrence_rules.size(); ++r) {
        rule_of[cfg.co_occurrence_rules[r].target] = static_cast<int>(r);
    }
    const Matrix P = attribute_prototypes(cfg);
    const RngStream base(cfg.seed, Stream::data_gen);

    Dataset ds;
    ds.X = Matrix(cfg.N, cfg.D);
    ds.Y = LabelMatrix(cfg.N, cfg.C);
    ds.attribute_names = default_attribute_names(cfg.C);
    for (std::size_t i = 0; i < cfg.N; ++i) {
        RngStream rng = base.substream(i);
        for (std::size_t k : order) {
            bool label;
            if (rule_of[k] >= 0) {
                const auto& rule = cfg.co_occurrence_rules[static_cast<std::size_t>(rule_of[k])];
                const bool copy = rng.bernoulli(rule.rho);
                const bool fresh = rng.bernoulli(cfg.target_means[k]);
                label = copy ? ds.Y(i, rule.source) != 0 : fresh;
            } else {
                label = rng.bernoulli(cfg.target_means[k]);
            }
            ds.Y(i, k) = label ? 1 : 0;
        }
        auto x = ds.X.row(i);
        for (std::size_t k = 0; k < cfg.C; ++k) {
            if (ds.Y(i, k)) {
                axpy(cfg.prototype_scale, P.row(k), x);
            }
        }
        for (auto& v : x) {
            v += cfg.noise_sigma * rng.normal();
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline void write_csv(const Dataset& ds, std::ostream& out) {
    out << "id";
    for (std::size_t d = 0; d < ds.input_dim(); ++d) {
        out << ",x_" << d;
    }
    for (std::size_t k = 0; k < ds.num_attributes(); ++k) {
        out << ",y_" << k;
    }
    out << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out << i;
        for (double v : ds.X.row(i)) {
            out << ',' << format_double(v);
        }
        for (std::size_t k = 0; k < ds.num_attributes(); ++k) {
            out << ',' << static_cast<int>(ds.Y(i, k));
        }
        out << '\n';
    }
}

inline void write_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail(ErrorKind::io, "io.open_failed", "cannot write " + path);
    }
    write_csv(ds, out);
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return cells;
}

inline bool parse_double(std::string_view s, double& out) {
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

} // namespace detail

/// Reads `id,x_0..x_{D-1},y_0..y_{C-1}`.
inline Dataset load_csv(std::istream& in, const std::string& source = "<stream>") {
    auto malformed = [&](std::size_t line_no, const std::string& what) {
        fail(ErrorKind::io, "io.malformed_row", source + ":" + std::to_string(line_no) + ": " + what);
    };
    std::string line;
    if (!std::getline(in, line)) {
        fail(ErrorKind::io, "io.empty_file", source + ": missing header");
    }
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    const auto header = detail::split_commas(line);
    if (header.empty() || header[0] != "id") {
        malformed(1, "header must start with 'id'");
    }
    std::size_t D = 0;
    std::size_t C = 0;
    for (std::size_t c = 1; c < header.size(); ++c) {
        const std::string expected_x = "x_" + std::to_string(D);
        const std::string expected_y = "y_" + std::to_string(C);
        if (C == 0 && header[c] == expected_x) {
            ++D;
        } else if (header[c] == expected_y) {
            ++C;
        } else {
            malformed(1, "unexpected header column '" + std::string(header[c]) + "'");
        }
    }
    if (C == 0) {
        malformed(1, "no label columns");
    }

    Dataset ds;
    ds.attribute_names = default_attribute_names(C);
    std::vector<double> xs;
    std::vector<std::uint8_t> ys;
    std::size_t line_no = 1;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const auto cells = detail::split_commas(line);
        if (cells.size() != header.size()) {
            fail(ErrorKind::io, "io.column_count",
                 source + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) + " columns, got " +
                     std::to_string(cells.size()));
        }
        for (std::size_t d = 0; d < D; ++d) {
            double v = 0.0;
            if (!detail::parse_double(cells[1 + d], v)) {
                malformed(line_no, "bad number '" + std::string(cells[1 + d]) + "'");
            }
            xs.push_back(v);
        }
        for (std::size_t k = 0; k < C; ++k) {
            const auto cell = cells[1 + D + k];
            if (cell == "0") {
                ys.push_back(0);
            } else if (cell == "1") {
                ys.push_back(1);
            } else {
                fail(ErrorKind::io, "io.non_binary_label",
                     source + ":" + std::to_string(line_no) + ": label '" + std::string(cell) + "' is not 0/1");
            }
        }
        ++n;
    }
    if (n == 0) {
        fail(ErrorKind::io, "io.empty_file", source + ": no data rows");
    }
    ds.X = Matrix(n, D);
    ds.X.data = std::move(xs);
    ds.Y = LabelMatrix(n, C);
    ds.Y.data = std::move(ys);
    return ds;
}

inline Dataset load_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::io, "io.missing_file", "cannot open " + path);
    }
    return load_csv(in, path);
}

// ---------------------------------------------------------------------------
// statistics

struct LabelStats {
    std::vector<double> label_means;
    std::vector<double> imbalance; // |mean - 0.5|
    Matrix cooccurrence;           // joint positive frequency, C x C
    std::vector<std::size_t> positives;
    std::vector<bool> degenerate;  // all-positive or all-negative
    std::size_t N = 0;
};

inline LabelStats label_stats(const LabelMatrix& Y) {
    if (Y.rows == 0) {
        fail(ErrorKind::invalid_input, "input.empty_dataset", "label_stats: empty label matrix");
    }
    const std::size_t C = Y.cols;
    LabelStats s;
    s.N = Y.rows;
    s.positives.assign(C, 0);
    std::vector<std::size_t> joint(C * C, 0);
    for (std::size_t i = 0; i < Y.rows; ++i) {
        for (std::size_t a = 0; a < C; ++a) {
            if (!Y(i, a)) {
                continue;
            }
            ++s.positives[a];
            for (std::size_t b = 0; b < C; ++b) {
                if (Y(i, b)) {
                    ++joint[a * C + b];
                }
            }
        }
    }
    const double n = static_cast<double>(Y.rows);
    s.cooccurrence = Matrix(C, C);
    for (std::size_t a = 0; a < C; ++a) {
        s.label_means.push_back(static_cast<double>(s.positives[a]) / n);
        s.imbalance.push_back(std::abs(s.label_means[a] - 0.5));
        s.degenerate.push_back(s.positives[a] == 0 || s.positives[a] == Y.rows);
        for (std::size_t b = 0; b < C; ++b) {
            s.cooccurrence(a, b) = static_cast<double>(joint[a * C + b]) / n;
        }
    }
    return s;
}

inline LabelStats label_stats(const Dataset& ds) { return label_stats(ds.Y); }

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const CooccurrenceRule& r) {
    j = nlohmann::json{{"source", r.source}, {"target", r.target}, {"rho", r.rho}};
}

inline void from_json(const nlohmann::json& j, CooccurrenceRule& r) {
    j.at("source").get_to(r.source);
    j.at("target").get_to(r.target);
    j.at("rho").get_to(r.rho);
}

inline void to_json(nlohmann::json& j, const GenConfig& c) {
    j = nlohmann::json{{"N", c.N},
                       {"D", c.D},
                       {"C", c.C},
                       {"target_means", c.target_means},
                       {"co_occurrence_rules", c.co_occurrence_rules},
                       {"prototype_scale", c.prototype_scale},
                       {"noise_sigma", c.noise_sigma},
                       {"seed", c.seed}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, GenConfig& c) {
    c.N = j.value("N", c.N);
    c.D = j.value("D", c.D);
    c.C = j.value("C", c.C);
    c.target_means = j.value("target_means", c.target_means);
    c.co_occurrence_rules = j.value("co_occurrence_rules", c.co_occurrence_rules);
    c.prototype_scale = j.value("prototype_scale", c.prototype_scale);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.seed = j.value("seed", c.seed);
}

inline nlohmann::json stats_to_json(const LabelStats& s) {
    nlohmann::json co = nlohmann::json::array();
    for (std::size_t a = 0; a < s.cooccurrence.rows; ++a) {
        co.push_back(std::vector<double>(s.cooccurrence.row(a).begin(), s.cooccurrence.row(a).end()));
    }
    return {{"schema_version", 1},
            {"N", s.N},
            {"label_means", s.label_means},
            {"imbalance", s.imbalance},
            {"positives", s.positives},
            {"degenerate", s.degenerate},
            {"cooccurrence", co}};
}

} // namespace labelbal
