// labelbal: data generation, feasibility audits, training arms, evaluation,
// report comparison and gamma sweeps.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "labelbal/datagen.hpp"
#include "labelbal/error.hpp"
#include "labelbal/experiment.hpp"
#include "labelbal/lir.hpp"
#include "labelbal/metrics.hpp"
#include "labelbal/model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace labelbal;

namespace {

json read_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::io, "io.missing_file", "cannot open " + path);
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::config, "config.malformed_json", path + ": " + e.what());
    }
}

void write_text(const std::string& path, const std::string& text) {
    const fs::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail(ErrorKind::io, "io.open_failed", "cannot write " + path);
    }
    out << text;
    if (!out) {
        fail(ErrorKind::io, "io.write_failed", "failed writing " + path);
    }
}

void emit_json(const json& j, const std::string& path) {
    const std::string text = j.dump(2) + "\n";
    if (path.empty() || path == "-") {
        std::cout << text;
    } else {
        write_text(path, text);
    }
}

// Timestamps never go into the primary outputs.
void write_meta(const std::string& path, const std::string& command, double seconds) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    write_text(path, json{{"schema_version", 1}, {"command", command}, {"finished_at", stamp}, {"wall_seconds", seconds},
                          {"threads", thread_cap()}}
                         .dump(2) +
                         "\n");
}

RunConfig load_run_config(const std::string& path, const std::optional<std::uint64_t>& seed, const std::string& arm,
                          const std::string& out_dir) {
    RunConfig c = path.empty() ? RunConfig{} : run_config_from_json(read_json(path));
    if (seed) {
        c.seed = seed;
    }
    if (!arm.empty()) {
        c.arm = parse_arm(arm);
    }
    if (!out_dir.empty()) {
        c.output_dir = out_dir;
    }
    apply_seed(c);
    validate(c);
    return c;
}

const std::vector<double> kCurveEdges{0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 1.0};

json curve_to_json(const LabelMeanCurve& curve) {
    json ranked = json::array();
    for (const auto& a : curve.ranked) {
        ranked.push_back({{"attribute", a.attribute}, {"label_mean", a.label_mean}, {"imbalance", a.imbalance}, {"mA", a.mA}});
    }
    return ranked;
}

// ---------------------------------------------------------------------------

int cmd_gen(const std::string& config, const std::optional<std::uint64_t>& seed, const std::string& out, const std::string& stats) {
    GenConfig g;
    if (!config.empty()) {
        const json j = read_json(config);
        try {
            g = (j.contains("gen") ? j.at("gen") : j).get<GenConfig>();
        } catch (const json::exception& e) {
            fail(ErrorKind::config, "config.malformed", std::string("malformed generator config: ") + e.what());
        }
    }
    if (seed) {
        g.seed = *seed;
    }
    const Dataset ds = generate_synthetic(g);
    std::ostringstream csv;
    write_csv(ds, csv);
    write_text(out, csv.str());
    json s = stats_to_json(label_stats(ds));
    s["config"] = g;
    emit_json(s, stats);
    return 0;
}

int cmd_feasibility(const std::string& data, const std::optional<double>& eps, const std::string& out) {
    const Dataset ds = load_csv(data);
    const FeasibilityResult r = check_lir_feasibility(ds.Y, eps.value_or(default_lir_eps(ds.size())));
    emit_json(to_json_value(r), out);
    return 0;
}

int cmd_train(const RunConfig& c) {
    const auto start = std::chrono::steady_clock::now();
    const Dataset ds = load_run_dataset(c);
    const Split split = split_dataset(ds, c.eval_split, c.train.seed);
    ArmOutcome outcome = run_arm(c.arm, split.train, c.train, c.shape);
    const EvalReport report = evaluate_model(outcome.params, outcome.test_head, split.test);
    const LabelStats train_stats = label_stats(split.train);
    const LabelMeanCurve curve = ma_by_label_mean_buckets(report, train_stats, kCurveEdges);

    const fs::path dir(c.output_dir);
    json r = report_to_json(report);
    r["arm"] = arm_name(c.arm);
    r["test_head"] = head_name(outcome.test_head);
    r["n_train"] = split.train.size();
    r["n_test"] = split.test.size();
    r["train_label_means"] = train_stats.label_means;
    r["ranked_attributes"] = curve_to_json(curve);
    if (outcome.centroids) {
        r["loss_centroids"] = outcome.centroids->mu;
    }
    write_text((dir / "report.json").string(), r.dump(2) + "\n");
    write_text((dir / "config.json").string(), run_config_to_json(c).dump(2) + "\n");
    write_text((dir / "checkpoint.json").string(), checkpoint_to_json(outcome.params, outcome.test_head).dump() + "\n");
    std::ostringstream log;
    outcome.log.write_csv(log);
    write_text((dir / "train_log.csv").string(), log.str());
    std::ostringstream cv;
    write_curve_csv(curve, cv);
    write_text((dir / "label_mean_curve.csv").string(), cv.str());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_meta((dir / "meta.json").string(), "train", secs);
    std::cout << "arm " << arm_name(c.arm) << ": mA " << format_double(report.mA) << " F1 " << format_double(report.F1) << '\n';
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& head, double threshold, const std::string& out) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const Dataset ds = load_csv(data);
    if (ds.input_dim() != ck.params.shape.D || ds.num_attributes() != ck.params.shape.C) {
        fail(ErrorKind::config, "checkpoint.shape_mismatch", "dataset columns do not match the checkpoint shape");
    }
    Head h = ck.test_head;
    if (head == "cls") {
        h = Head::cls;
    } else if (head == "ft") {
        h = Head::ft;
    } else if (!head.empty()) {
        fail(ErrorKind::config, "config.head", "head must be cls or ft");
    }
    json r = report_to_json(evaluate_model(ck.params, h, ds, threshold));
    r["test_head"] = head_name(h);
    emit_json(r, out);
    return 0;
}

int cmd_compare(const std::vector<std::string>& paths, const std::vector<std::string>& names, const std::string& csv_out) {
    if (!names.empty() && names.size() != paths.size()) {
        fail(ErrorKind::config, "config.names", "give one name per report");
    }
    std::vector<NamedReport> reports;
    for (std::size_t i = 0; i < paths.size(); ++i) {
        EvalReport r;
        try {
            r = report_from_json(read_json(paths[i]));
        } catch (const json::exception& e) {
            fail(ErrorKind::config, "config.malformed_report", paths[i] + ": " + e.what());
        }
        reports.push_back({names.empty() ? fs::path(paths[i]).parent_path().filename().string() + "/" + fs::path(paths[i]).filename().string()
                                         : names[i],
                           std::move(r)});
    }
    check_comparable(reports);
    std::ostringstream csv;
    write_comparison_csv(reports, csv);
    if (!csv_out.empty()) {
        write_text(csv_out, csv.str());
    }
    std::cout << comparison_table(reports);
    return 0;
}

std::vector<double> parse_gammas(const std::string& text) {
    std::vector<double> out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) {
            continue;
        }
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) {
            fail(ErrorKind::config, "config.gamma", "not a number in the gamma list: '" + item + "'");
        }
        out.push_back(v);
    }
    return out;
}

int cmd_sweep(const RunConfig& c, const std::vector<double>& gammas, const std::string& out) {
    const auto start = std::chrono::steady_clock::now();
    const Dataset ds = load_run_dataset(c);
    const Split split = split_dataset(ds, c.eval_split, c.train.seed);
    const auto points = sweep_gamma(split.train, split.test, c.train, c.shape, gammas);
    std::ostringstream csv;
    write_sweep_csv(points, csv);
    write_text(out, csv.str());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_meta(out + ".meta.json", "sweep-gamma", secs);
    std::cout << csv.str();
    return 0;
}

void report_error(const std::string& code, const std::string& message) {
    std::cerr << json{{"schema_version", 1}, {"error", {{"code", code}, {"message", message}}}}.dump() << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Label-balanced multi-label training toolkit"};
    app.require_subcommand(1);

    std::string config, out, stats, data, arm, out_dir, checkpoint, head, csv_out;
    std::optional<std::uint64_t> seed;
    std::optional<double> eps;
    double threshold = 0.5;
    std::vector<std::string> reports, names;
    std::string gammas = "0,0.25,0.5,0.75,1";

    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    gen->add_option("--config", config, "generator config JSON");
    gen->add_option("--seed", seed, "override the generator seed");
    gen->add_option("--out", out, "dataset CSV path")->required();
    gen->add_option("--stats", stats, "label statistics JSON path (default stdout)");

    auto* feas = app.add_subcommand("feasibility", "check whether label-balanced image re-sampling exists");
    feas->add_option("--data", data, "dataset CSV")->required();
    feas->add_option("--eps", eps, "minimum sampling weight (default 1e-6/N)");
    feas->add_option("--out", out, "result JSON path (default stdout)");

    auto* train = app.add_subcommand("train", "train one arm and evaluate on the held-out split");
    train->add_option("--config", config, "run config JSON");
    train->add_option("--seed", seed, "override data and training seeds");
    train->add_option("--arm", arm, "baseline | reweighted | frdl | frdl_goat | isda");
    train->add_option("--out", out_dir, "output directory");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset CSV");
    eval->add_option("--checkpoint", checkpoint, "checkpoint JSON")->required();
    eval->add_option("--data", data, "dataset CSV")->required();
    eval->add_option("--head", head, "cls or ft (default: the checkpoint's test head)");
    eval->add_option("--threshold", threshold, "positive when p > threshold");
    eval->add_option("--out", out, "report JSON path (default stdout)");

    auto* cmp = app.add_subcommand("compare", "compare evaluation reports");
    cmp->add_option("reports", reports, "report JSON files; the first is the reference")->required();
    cmp->add_option("--names", names, "display names");
    cmp->add_option("--csv", csv_out, "per-attribute delta CSV path");

    auto* sweep = app.add_subcommand("sweep-gamma", "representation quality against the label-balancing ratio");
    sweep->add_option("--config", config, "run config JSON");
    sweep->add_option("--seed", seed, "override data and training seeds");
    sweep->add_option("--gammas", gammas, "comma-separated gamma values (default 0,0.25,0.5,0.75,1)");
    sweep->add_option("--out", out, "curve CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report_error("usage", e.what());
        return 2;
    }

    try {
        if (*gen) {
            return cmd_gen(config, seed, out, stats);
        }
        if (*feas) {
            return cmd_feasibility(data, eps, out);
        }
        if (*train) {
            return cmd_train(load_run_config(config, seed, arm, out_dir));
        }
        if (*eval) {
            return cmd_eval(checkpoint, data, head, threshold, out);
        }
        if (*cmp) {
            return cmd_compare(reports, names, csv_out);
        }
        if (*sweep) {
            return cmd_sweep(load_run_config(config, seed, "", ""), parse_gammas(gammas), out);
        }
    } catch (const Error& e) {
        report_error(e.code(), e.what());
        return exit_code_for(e.kind());
    } catch (const json::exception& e) {
        report_error("config.malformed", e.what());
        return 2;
    } catch (const std::exception& e) {
        report_error("internal", e.what());
        return 1;
    }
    return 0;
}
