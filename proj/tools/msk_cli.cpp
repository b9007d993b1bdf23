// Command-line front end: solve/oracle on matrix files, train/eval/ablate the
// toy model, bench convergence. Every subcommand prints one JSON summary line
// as its last stdout line. Exit codes: 0 success, 1 usage error, 2 numerical
// failure, 3 I/O error.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "msk/exact_oracle.hpp"
#include "msk/matrix_io.hpp"
#include "msk/sinkhorn.hpp"
#include "msk/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitIo = 3;

void emit(const json& summary) { std::cout << summary.dump() << "\n"; }

int fail(int code, const std::string& status, const std::string& message) {
    emit(json{{"status", status}, {"message", message}});
    return code;
}

// ---------------------------------------------------------------------------
// TrainConfig JSON (snake_case keys, all fields optional with defaults)
// ---------------------------------------------------------------------------

msk::TrainConfig parse_train_config(const json& j) {
    msk::TrainConfig cfg;
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        auto& ds = cfg.dataset;
        ds.n_samples = d.value("n_samples", ds.n_samples);
        if (d.contains("d_input")) {
            auto v = d.at("d_input").get<std::vector<std::size_t>>();
            if (v.size() != 3) throw std::invalid_argument("dataset.d_input needs 3 entries");
            ds.d_input = {v[0], v[1], v[2]};
        }
        ds.n_shared_concepts = d.value("n_shared_concepts", ds.n_shared_concepts);
        ds.n_private_concepts = d.value("n_private_concepts", ds.n_private_concepts);
        ds.private_scale = d.value("private_scale", ds.private_scale);
        ds.noise_sigma = d.value("noise_sigma", ds.noise_sigma);
        ds.misalignment_rate = d.value("misalignment_rate", ds.misalignment_rate);
        ds.seed = d.value("seed", ds.seed);
    }
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.lr_decay = j.value("lr_decay", cfg.lr_decay);
    cfg.k = j.value("k", cfg.k);
    cfg.k_prime = j.value("k_prime", cfg.k_prime);
    cfg.d_joint = j.value("d_joint", cfg.d_joint);
    cfg.bank_capacity = j.value("bank_capacity", cfg.bank_capacity);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("solver")) {
        const json& s = j.at("solver");
        cfg.solver.epsilon = s.value("epsilon", cfg.solver.epsilon);
        cfg.solver.max_iters = s.value("max_iters", cfg.solver.max_iters);
        cfg.solver.tol = s.value("tol", cfg.solver.tol);
        cfg.solver.mu = s.value("mu", cfg.solver.mu);
    }
    if (j.contains("loss")) {
        const json& l = j.at("loss");
        auto& lc = cfg.loss;
        lc.tau = l.value("tau", lc.tau);
        lc.kappa = l.value("kappa", lc.kappa);
        lc.alpha = l.value("alpha", lc.alpha);
        lc.beta = l.value("beta", lc.beta);
        lc.lambda_tv = l.value("lambda_tv", lc.lambda_tv);
        lc.lambda_ta = l.value("lambda_ta", lc.lambda_ta);
        lc.lambda_va = l.value("lambda_va", lc.lambda_va);
        lc.lambda_sspc = l.value("lambda_sspc", lc.lambda_sspc);
        lc.lambda_nce = l.value("lambda_nce", lc.lambda_nce);
        if (l.contains("pair_weights")) {
            auto w = l.at("pair_weights").get<std::vector<std::vector<double>>>();
            if (w.size() != 3 || w[0].size() != 3 || w[1].size() != 3 || w[2].size() != 3) {
                throw std::invalid_argument("loss.pair_weights must be 3x3");
            }
            for (std::size_t m = 0; m < 3; ++m) {
                for (std::size_t n = 0; n < 3; ++n) lc.pair_weights[m][n] = w[m][n];
            }
        }
    }
    return cfg;
}

msk::TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw msk::IoError("cannot open config file: " + path);
    }
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw msk::IoError("config is not valid JSON: " + std::string(e.what()));
    }
    return parse_train_config(j);
}

msk::Ablation parse_ablation(const std::string& name) {
    if (name == "full") return msk::Ablation::full;
    if (name == "no_sspc") return msk::Ablation::no_sspc;
    if (name == "no_cm_sspc") return msk::Ablation::no_cm_sspc;
    if (name == "modified_sk") return msk::Ablation::modified_sk;
    throw std::invalid_argument("unknown ablation: " + name);
}

json metrics_to_json(const msk::EpochMetrics& em) {
    return json{{"epoch", em.epoch},
                {"loss_total", em.loss_total},
                {"loss_sspc", em.loss_sspc},
                {"loss_nce", em.loss_nce},
                {"structure_score", em.structure_score},
                {"r_at_1", em.r_at_1},
                {"r_at_5", em.r_at_5},
                {"med_r", em.med_r},
                {"mean_r", em.mean_r}};
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) {
        throw msk::IoError("cannot open for writing: " + path);
    }
    out << text;
    if (!out) {
        throw msk::IoError("write failed: " + path);
    }
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

struct SolveArgs {
    std::string input, out, dump_tensor;
    std::string solver = "multi";
    std::size_t k_prime = 1;
    double mu = 0.25;
    double epsilon = 0.05;
    double tol = 1e-6;
    std::size_t max_iters = 1000;
};

int run_solve(const SolveArgs& a) {
    msk::DenseMatrix s = msk::read_matrix_csv(a.input);
    msk::SolverConfig cfg;
    cfg.epsilon = a.epsilon;
    cfg.tol = a.tol;
    cfg.max_iters = a.max_iters;
    cfg.mu = a.mu;
    cfg.k_prime = a.k_prime;

    msk::DenseMatrix q;
    msk::SolveReport report;
    if (a.solver == "multi") {
        msk::MultiSkResult res = msk::multi_sinkhorn(s, cfg);
        q = res.q;
        report = res.report;
        if (!a.dump_tensor.empty()) {
            msk::write_tensor3(res.q_tensor, a.dump_tensor);
        }
    } else if (a.solver == "vanilla") {
        if (!a.dump_tensor.empty()) {
            throw std::invalid_argument("--dump-tensor requires --solver multi");
        }
        std::vector<double> rm(s.rows(), 1.0);
        std::vector<double> cm(s.cols(),
                               static_cast<double>(s.rows()) / static_cast<double>(s.cols()));
        std::tie(q, report) = msk::vanilla_sinkhorn(s, rm, cm, cfg);
    } else if (a.solver == "modified") {
        if (!a.dump_tensor.empty()) {
            throw std::invalid_argument("--dump-tensor requires --solver multi");
        }
        std::tie(q, report) = msk::modified_sinkhorn(s, cfg);
    } else {
        throw std::invalid_argument("unknown solver: " + a.solver);
    }
    msk::write_matrix_csv(q, a.out);

    json summary{{"status", report.converged ? "ok" : "not_converged"},
                 {"solver", a.solver},
                 {"rows", s.rows()},
                 {"cols", s.cols()},
                 {"k_prime", a.k_prime},
                 {"iterations", report.iterations_used},
                 {"final_violation", report.final_violation},
                 {"converged", report.converged},
                 {"objective", msk::dot(q, s)},
                 {"out", a.out}};
    emit(summary);
    return report.converged ? kExitOk : kExitNumerical;
}

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

int run_oracle(const std::string& input, std::size_t k_prime, const std::string& out) {
    msk::DenseMatrix s = msk::read_matrix_csv(input);
    msk::OracleResult res = msk::solve_exact(s, k_prime);
    msk::write_matrix_csv(res.q_binary, out);
    emit(json{{"status", "ok"},
              {"rows", s.rows()},
              {"cols", s.cols()},
              {"k_prime", k_prime},
              {"objective", res.objective},
              {"candidates_enumerated", res.candidates_enumerated},
              {"out", out}});
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train / eval / ablate
// ---------------------------------------------------------------------------

json ablation_entry_to_json(const msk::AblationEntry& e) {
    json log = json::array();
    for (const auto& em : e.log) log.push_back(metrics_to_json(em));
    return json{{"mode", msk::to_string(e.mode)},
                {"structure_score", e.structure_score},
                {"r_at_1", e.retrieval.r_at_1},
                {"r_at_5", e.retrieval.r_at_5},
                {"med_r", e.retrieval.med_r},
                {"mean_r", e.retrieval.mean_r},
                {"log", log}};
}

int run_train(msk::TrainConfig cfg, const std::string& ablation, const std::string& out_dir) {
    msk::Ablation mode = parse_ablation(ablation);
    cfg.validate();
    fs::create_directories(out_dir);
    msk::SyntheticDataset data = msk::generate_synthetic(cfg.dataset);
    msk::TrainResult res = msk::train(data, cfg, mode);

    std::string jsonl;
    for (const auto& em : res.log) {
        jsonl += metrics_to_json(em).dump();
        jsonl += "\n";
    }
    std::string metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
    write_text_file(metrics_path, jsonl);

    const msk::EpochMetrics& last = res.log.back();
    json report{{"status", "ok"},
                {"ablation", msk::to_string(mode)},
                {"epochs", res.log.size()},
                {"final", metrics_to_json(last)},
                {"metrics", metrics_path}};
    write_text_file((fs::path(out_dir) / "report.json").string(), report.dump(2) + "\n");
    emit(report);
    return kExitOk;
}

int run_eval(msk::TrainConfig cfg, const std::string& ablation, const std::string& out) {
    // deterministic re-train + held-out evaluation; emits the final record only
    msk::Ablation mode = parse_ablation(ablation);
    cfg.validate();
    msk::SyntheticDataset data = msk::generate_synthetic(cfg.dataset);
    msk::TrainResult res = msk::train(data, cfg, mode);
    json final = metrics_to_json(res.log.back());
    final["ablation"] = msk::to_string(mode);
    if (!out.empty()) {
        write_text_file(out, final.dump(2) + "\n");
    }
    final["status"] = "ok";
    emit(final);
    return kExitOk;
}

int run_ablate(msk::TrainConfig cfg, const std::string& out) {
    cfg.validate();
    msk::AblationReport report = msk::ablation_suite(cfg);
    json entries = json::array();
    for (const auto& e : report.entries) entries.push_back(ablation_entry_to_json(e));
    json j{{"status", "ok"}, {"data_checksum", report.data_checksum}, {"entries", entries}};
    write_text_file(out, j.dump(2) + "\n");
    emit(json{{"status", "ok"}, {"out", out}, {"variants", report.entries.size()}});
    return kExitOk;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchSize {
    std::size_t n = 0, k = 0;
};

BenchSize parse_size(const std::string& spec) {
    auto pos = spec.find('x');
    if (pos == std::string::npos || pos == 0 || pos + 1 >= spec.size()) {
        throw std::invalid_argument("malformed size spec: " + spec + " (expected NxK)");
    }
    BenchSize s;
    try {
        s.n = std::stoul(spec.substr(0, pos));
        s.k = std::stoul(spec.substr(pos + 1));
    } catch (const std::exception&) {
        throw std::invalid_argument("malformed size spec: " + spec);
    }
    if (s.n == 0 || s.k == 0) {
        throw std::invalid_argument("malformed size spec: " + spec);
    }
    return s;
}

int run_bench(const std::vector<std::string>& sizes, const std::vector<double>& epsilons,
              std::size_t repeats, const std::string& solver, const std::string& out,
              const std::string& curve_out, std::uint64_t seed) {
    if (repeats == 0) {
        throw std::invalid_argument("--repeats must be >= 1");
    }
    std::vector<BenchSize> parsed;
    for (const auto& s : sizes) parsed.push_back(parse_size(s));
    for (double e : epsilons) {
        if (e <= 0.0) throw std::invalid_argument("epsilon must be > 0");
    }

    std::string table = "n,k,epsilon,repeat,iterations,wall_time_s,final_violation,converged\n";
    std::string curves = "n,k,epsilon,repeat,iteration,violation\n";
    std::size_t rows = 0;
    for (const BenchSize& sz : parsed) {
        for (double eps : epsilons) {
            for (std::size_t rep = 0; rep < repeats; ++rep) {
                std::mt19937_64 rng(seed + rep);
                std::uniform_real_distribution<double> u(0.0, 1.0);
                msk::DenseMatrix s(sz.n, sz.k);
                for (double& v : s.data()) v = u(rng);
                msk::SolverConfig cfg;
                cfg.epsilon = eps;
                cfg.k_prime = std::max<std::size_t>(1, sz.k / 2);

                std::vector<double> residuals;
                msk::SolveReport report;
                auto t0 = std::chrono::steady_clock::now();
                if (solver == "multi") {
                    report = msk::multi_sinkhorn(s, cfg, &residuals).report;
                } else if (solver == "vanilla") {
                    std::vector<double> rm(sz.n, 1.0);
                    std::vector<double> cm(sz.k, static_cast<double>(sz.n) /
                                                     static_cast<double>(sz.k));
                    report = msk::vanilla_sinkhorn(s, rm, cm, cfg, &residuals).second;
                } else {
                    throw std::invalid_argument("unknown solver: " + solver);
                }
                double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                                  .count();

                char row[256];
                std::snprintf(row, sizeof(row), "%zu,%zu,%.17g,%zu,%zu,%.6f,%.17g,%d\n", sz.n,
                              sz.k, eps, rep, report.iterations_used, secs,
                              report.final_violation, report.converged ? 1 : 0);
                table += row;
                ++rows;
                for (std::size_t it = 0; it < residuals.size(); ++it) {
                    char c[192];
                    std::snprintf(c, sizeof(c), "%zu,%zu,%.17g,%zu,%zu,%.17g\n", sz.n, sz.k, eps,
                                  rep, it + 1, residuals[it]);
                    curves += c;
                }
            }
        }
    }
    write_text_file(out, table);
    if (!curve_out.empty()) {
        write_text_file(curve_out, curves);
    }
    emit(json{{"status", "ok"}, {"rows", rows}, {"out", out}, {"curve_out", curve_out}});
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-assignment Sinkhorn-Knopp solver and toy trainer"};
    app.require_subcommand(1);

    SolveArgs solve_args;
    auto* solve = app.add_subcommand("solve", "Run a scaling solver on a similarity matrix");
    solve->add_option("--input", solve_args.input, "Input similarity CSV")->required();
    solve->add_option("--k-prime", solve_args.k_prime, "Anchors per sample")->required();
    solve->add_option("--mu", solve_args.mu, "Damping factor");
    solve->add_option("--epsilon", solve_args.epsilon, "Entropic regularization");
    solve->add_option("--tol", solve_args.tol, "Convergence tolerance");
    solve->add_option("--max-iters", solve_args.max_iters, "Maximum sweeps");
    solve->add_option("--out", solve_args.out, "Output assignment CSV")->required();
    solve->add_option("--solver", solve_args.solver, "multi | vanilla | modified");
    solve->add_option("--dump-tensor", solve_args.dump_tensor, "Write the full Q' tensor");

    std::string oracle_input, oracle_out;
    std::size_t oracle_kp = 1;
    auto* oracle = app.add_subcommand("oracle", "Exact enumeration solver");
    oracle->add_option("--input", oracle_input, "Input similarity CSV")->required();
    oracle->add_option("--k-prime", oracle_kp, "Anchors per sample")->required();
    oracle->add_option("--out", oracle_out, "Output binary assignment CSV")->required();

    std::string train_config, train_out_dir, train_ablation = "full";
    std::uint64_t cli_seed = 0;
    auto* train = app.add_subcommand("train", "Train the toy model");
    train->add_option("--config", train_config, "TrainConfig JSON")->required();
    train->add_option("--out-dir", train_out_dir, "Output directory")->required();
    train->add_option("--ablation", train_ablation, "full | no_sspc | no_cm_sspc | modified_sk");
    auto* train_seed = train->add_option("--seed", cli_seed, "Override config seeds");

    std::string eval_config, eval_out, eval_ablation = "full";
    auto* eval = app.add_subcommand("eval", "Deterministic train + held-out evaluation");
    eval->add_option("--config", eval_config, "TrainConfig JSON")->required();
    eval->add_option("--out", eval_out, "Final metrics JSON");
    eval->add_option("--ablation", eval_ablation, "full | no_sspc | no_cm_sspc | modified_sk");
    auto* eval_seed = eval->add_option("--seed", cli_seed, "Override config seeds");

    std::string ablate_config, ablate_out;
    auto* ablate = app.add_subcommand("ablate", "Train and compare all ablation variants");
    ablate->add_option("--config", ablate_config, "TrainConfig JSON")->required();
    ablate->add_option("--out", ablate_out, "Report JSON path")->required();
    auto* ablate_seed = ablate->add_option("--seed", cli_seed, "Override config seeds");

    std::vector<std::string> bench_sizes;
    std::vector<double> bench_epsilons;
    std::size_t bench_repeats = 1;
    std::string bench_solver = "multi", bench_out = "bench.csv", bench_curve = "bench_curve.csv";
    std::uint64_t bench_seed = 0;
    auto* bench = app.add_subcommand("bench", "Convergence benchmark on random instances");
    bench->add_option("--sizes", bench_sizes, "Comma-separated NxK specs")
        ->required()
        ->delimiter(',');
    bench->add_option("--epsilons", bench_epsilons, "Comma-separated epsilon values")
        ->required()
        ->delimiter(',');
    bench->add_option("--repeats", bench_repeats, "Repeats per cell");
    bench->add_option("--solver", bench_solver, "multi | vanilla");
    bench->add_option("--out", bench_out, "Result table CSV");
    bench->add_option("--curve-out", bench_curve, "Per-iteration violation CSV");
    bench->add_option("--seed", bench_seed, "Base RNG seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        emit(json{{"status", "ok"}, {"message", "help"}});
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        return fail(kExitUsage, "usage_error", e.what());
    }

    try {
        if (solve->parsed()) {
            return run_solve(solve_args);
        }
        if (oracle->parsed()) {
            return run_oracle(oracle_input, oracle_kp, oracle_out);
        }
        if (train->parsed()) {
            msk::TrainConfig cfg = load_train_config(train_config);
            if (train_seed->count() > 0) {
                cfg.seed = cli_seed;
                cfg.dataset.seed = cli_seed;
            }
            return run_train(cfg, train_ablation, train_out_dir);
        }
        if (eval->parsed()) {
            msk::TrainConfig cfg = load_train_config(eval_config);
            if (eval_seed->count() > 0) {
                cfg.seed = cli_seed;
                cfg.dataset.seed = cli_seed;
            }
            return run_eval(cfg, eval_ablation, eval_out);
        }
        if (ablate->parsed()) {
            msk::TrainConfig cfg = load_train_config(ablate_config);
            if (ablate_seed->count() > 0) {
                cfg.seed = cli_seed;
                cfg.dataset.seed = cli_seed;
            }
            return run_ablate(cfg, ablate_out);
        }
        if (bench->parsed()) {
            return run_bench(bench_sizes, bench_epsilons, bench_repeats, bench_solver, bench_out,
                             bench_curve, bench_seed);
        }
    } catch (const msk::IoError& e) {
        return fail(kExitIo, "io_error", e.what());
    } catch (const msk::DivergenceError& e) {
        return fail(kExitNumerical, "numerical_error", e.what());
    } catch (const std::invalid_argument& e) {
        return fail(kExitUsage, "usage_error", e.what());
    } catch (const std::exception& e) {
        return fail(kExitNumerical, "numerical_error", e.what());
    }
    return fail(kExitUsage, "usage_error", "no subcommand");
}
