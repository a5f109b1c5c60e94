#include "ddln/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ddln/errors.hpp"
#include "ddln/experiments.hpp"
#include "ddln/paramcheck.hpp"

namespace ddln {

namespace {

class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Options {
    int layers = 4;
    int dim = 5;
    int samples = 10;
    std::uint64_t seed = 0;
    double tmax = 10.0;
    double step = 1e-3;
    std::string init_scheme = "uniform";
    double init_scale = 1.0;
    std::string init_file;
    std::string output;
    std::string diagnostics;
    bool adaptive = false;
    std::vector<double> scales;
    std::vector<double> alphas{1.0, 0.1, 0.01};
    int coordinate = 1;
    std::string model = "dln";
};

/// Collects check rows and prints them as an aligned table.
class Summary {
public:
    explicit Summary(std::ostream& out) : out_(out) {}

    void check(const std::string& name, double value, const std::string& tol, bool pass) {
        rows_.push_back({name, format(value), tol, pass ? "PASS" : "FAIL"});
        ok_ = ok_ && pass;
    }
    void info(const std::string& name, const std::string& value) { rows_.push_back({name, value, "", "info"}); }
    void info(const std::string& name, double value) { info(name, format(value)); }
    bool ok() const { return ok_; }

    void print() const {
        std::size_t w = 5;
        for (const auto& r : rows_) w = std::max(w, r[0].size());
        out_ << std::left << std::setw(static_cast<int>(w)) << "check" << "  " << std::setw(24) << "value"
             << "  " << std::setw(10) << "tolerance" << "  status\n";
        for (const auto& r : rows_) {
            out_ << std::setw(static_cast<int>(w)) << r[0] << "  " << std::setw(24) << r[1] << "  "
                 << std::setw(10) << r[2] << "  " << r[3] << '\n';
        }
        out_ << (ok_ ? "all checks passed\n" : "CHECKS FAILED\n");
    }

    static std::string format(double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6g", v);
        return buf;
    }

private:
    std::ostream& out_;
    std::vector<std::array<std::string, 4>> rows_;
    bool ok_ = true;
};

Matrix read_init_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open --init-file " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        for (char& c : line)
            if (c == ',' || c == ';') c = ' ';
        std::istringstream ss(line);
        std::vector<double> row;
        std::string tok;
        while (ss >> tok) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(tok, &used));
                if (used != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                throw UsageError("--init-file: not a number: '" + tok + "'");
            }
        }
        if (!row.empty()) rows.push_back(std::move(row));
    }
    if (rows.size() < 2) throw UsageError("--init-file needs at least two layers (one per line)");
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t j = 0; j < rows.size(); ++j) {
        if (rows[j].size() != rows.front().size()) throw UsageError("--init-file: layers have different lengths");
        for (std::size_t i = 0; i < rows[j].size(); ++i)
            m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = rows[j][i];
    }
    return m;
}

void open_for_write(std::ofstream& f, const std::string& path) {
    f.open(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
}

std::string with_suffix(const std::string& path, const std::string& suffix) {
    const std::filesystem::path p(path);
    return (p.parent_path() / (p.stem().string() + suffix + p.extension().string())).string();
}

std::string scale_suffix(double scale) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "_scale%g", scale);
    return buf;
}

void write_diagnostics(const std::string& path, const Trajectory& traj, const QuadraticLoss& loss) {
    if (path.empty()) return;
    std::ofstream f;
    open_for_write(f, path);
    write_diagnostics_csv(f, diagnose(traj, loss));
}

int run_simulate(const ExperimentConfig& cfg, std::ostream& out) {
    const QuadraticLoss loss = gaussian_problem(cfg.n, cfg.d, cfg.seed);
    const LayerStack stack0 = init_layers(cfg.d, cfg.L, cfg.init, init_seed(cfg.seed));
    const Trajectory traj = integrate(stack0, loss, cfg.controller());
    if (!cfg.output_path.empty()) {
        std::ofstream f;
        open_for_write(f, cfg.output_path);
        write_trajectory_csv(f, traj, true);
    }
    const DiagnosticsReport r = diagnose(traj, loss);
    if (!cfg.diagnostics_path.empty()) {
        std::ofstream f;
        open_for_write(f, cfg.diagnostics_path);
        write_diagnostics_csv(f, r);
    }

    Summary s(out);
    s.info("steps", static_cast<double>(traj.steps));
    s.info("final loss gap", traj.losses.back() - loss.optimal_value());
    s.check("conservation defect", r.conservation.maxCoeff(), "1e-6", r.conservation.maxCoeff() <= 1e-6);
    s.check("stays on manifold", r.on_manifold ? 1.0 : 0.0, "1", r.on_manifold);
    if (!r.index.holds()) {
        s.info("unique-minimum assumption", "violated; dependent checks skipped");
    } else {
        if (r.index.any_near_tie()) s.info("unique-minimum assumption", "near tie (sigma ~ 0)");
        s.check("sign census violations", r.census->violations, "0", r.census->verified());
        s.check("theta reconstruction error", *r.reconstruction_error, "1e-6", *r.reconstruction_error <= 1e-6);
        const double m_tol = 1e-9 * std::max(1.0, r.sigma->per_coordinate.maxCoeff());
        s.check("M(t) - sigma_i margin", *r.m_margin, ">= -1e-9", *r.m_margin >= -m_tol);
        s.info("sigma", r.sigma->sigma);
        s.check("rate bound violations", r.rate->violations, "0", r.rate->violations == 0);
        // Central-difference limited, so it scales with the grid spacing; reported only.
        if (r.mirror_general) s.info("mirror residual (general L)", *r.mirror_general);
    }
    if (r.mirror_closed_form) {
        s.check("mirror residual (2-layer closed form)", *r.mirror_closed_form, "1e-5",
                *r.mirror_closed_form <= 1e-5);
    }
    s.print();
    return s.ok() ? 0 : 1;
}

int run_crossings_cmd(const ExperimentConfig& cfg, std::ostream& out) {
    const CrossingsResult res = run_crossings(cfg);
    if (!cfg.output_path.empty()) {
        std::ofstream f;
        open_for_write(f, cfg.output_path);
        write_crossings_csv(f, res.trajectory, cfg.coordinate);
    }
    write_diagnostics(cfg.diagnostics_path, res.trajectory, res.loss);
    Summary s(out);
    const int i = cfg.coordinate;
    s.info("minimal layer of coordinate " + std::to_string(i + 1),
           std::to_string(res.index.k[static_cast<std::size_t>(i)] + 1));
    std::string crossed;
    for (int j : res.census.crossing_layers[static_cast<std::size_t>(i)])
        crossed += (crossed.empty() ? "" : ",") + std::to_string(j + 1);
    s.info("layers crossing zero at coordinate " + std::to_string(i + 1), crossed.empty() ? "none" : crossed);
    s.check("crossings only in minimal layers", res.census.violations, "0", res.census.verified());
    s.print();
    return s.ok() ? 0 : 1;
}

int run_convergence_cmd(const ExperimentConfig& cfg, std::ostream& out) {
    const ConvergenceResult res = run_convergence(cfg);
    Summary s(out);
    s.info("PL constant mu", res.runs.front().rate.mu);
    for (const ConvergenceRun& run : res.runs) {
        const std::string tag = "scale " + Summary::format(run.scale);
        if (!cfg.output_path.empty()) {
            const std::string path =
                res.runs.size() == 1 ? cfg.output_path : with_suffix(cfg.output_path, scale_suffix(run.scale));
            std::ofstream f;
            open_for_write(f, path);
            write_convergence_csv(f, run, res.loss);
        }
        if (!cfg.diagnostics_path.empty()) {
            const std::string path = res.runs.size() == 1
                                         ? cfg.diagnostics_path
                                         : with_suffix(cfg.diagnostics_path, scale_suffix(run.scale));
            write_diagnostics(path, run.trajectory, res.loss);
        }
        s.info(tag + ": sigma", run.sigma.sigma);
        s.info(tag + ": time to gap 1e-6", run.time_to_target ? Summary::format(*run.time_to_target) : "not reached");
        s.check(tag + ": rate bound violations", run.rate.violations, "0", run.rate.violations == 0);
    }
    if (res.runs.size() > 1) {
        s.check("larger init converges faster", res.ordering_holds ? 1.0 : 0.0, "1", res.ordering_holds);
    }
    s.print();
    return s.ok() ? 0 : 1;
}

int run_bias_cmd(const ExperimentConfig& cfg, std::ostream& out) {
    const BiasResult res = run_bias(cfg);
    if (!cfg.output_path.empty()) {
        std::ofstream f;
        open_for_write(f, cfg.output_path);
        write_bias_csv(f, res);
    }
    Summary s(out);
    for (const BiasRow& row : res.rows) {
        s.info("alpha " + Summary::format(row.alpha) + ": ||theta_inf||_1", row.l1_norm);
    }
    s.info("min ||theta||_1 over X theta = y", res.rows.front().l1_min);
    s.check("flow limit vs KKT solution (inf-norm)", res.max_mismatch, "1e-3", res.max_mismatch <= 1e-3);
    if (cfg.bias_model == BiasModel::two_layer) {
        s.check("L1 excess shrinks with alpha", res.l1_gap_decreasing ? 1.0 : 0.0, "1", res.l1_gap_decreasing);
        s.check("L1 excess at smallest alpha (rel)", res.l1_relative_gap_small, "0.05",
                res.l1_relative_gap_small <= 0.05);
        s.check("distance to min-L2 at large alpha (rel)", res.l2_relative_large, "0.05",
                res.l2_relative_large <= 0.05);
    }
    s.print();
    return s.ok() ? 0 : 1;
}

int run_paramcheck_cmd(const ExperimentConfig& cfg, std::ostream& out) {
    Summary s(out);
    for (const CertificationRow& row : run_paramcheck(cfg)) {
        s.check(row.claim, row.value, Summary::format(row.tolerance), row.passed);
    }
    s.info("pairwise-symmetric flow domains", "holds by disjoint block supports");
    s.print();
    return s.ok() ? 0 : 1;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Gradient-flow laboratory for deep diagonal linear networks", "ddln"};
    app.set_config("--config", "", "Read `key = value` options from a file (flags override)");
    app.require_subcommand(1);

    Options o;
    auto* layers = app.add_option("--layers", o.layers, "Number of layers L (>= 2)")->check(CLI::Range(2, 64));
    auto* dim = app.add_option("--dim", o.dim, "Dimension d of theta")->check(CLI::PositiveNumber);
    auto* samples = app.add_option("--samples", o.samples, "Number of samples n")->check(CLI::PositiveNumber);
    app.add_option("--seed", o.seed, "Random seed");
    auto* tmax = app.add_option("--tmax", o.tmax, "Flow time horizon")->check(CLI::PositiveNumber);
    auto* step = app.add_option("--step", o.step, "Integrator step h")->check(CLI::PositiveNumber);
    auto* scheme = app.add_option("--init-scheme", o.init_scheme, "uniform | fig3 | explicit | positive")
                       ->check(CLI::IsMember({"uniform", "fig3", "explicit", "positive"}));
    app.add_option("--init-scale", o.init_scale, "Scale of the fig3 initialization")->check(CLI::PositiveNumber);
    app.add_option("--init-file", o.init_file, "Explicit initial weights, one layer per line");
    app.add_option("--output", o.output, "CSV output path");
    app.add_option("--diagnostics", o.diagnostics, "Diagnostics CSV path");
    auto* adaptive = app.add_flag("--adaptive,!--fixed", o.adaptive, "Adaptive step-doubling RK4");
    app.add_option("--scales", o.scales, "convergence: fig3 scales to sweep (e.g. 1.0,1.4,1.8)")->delimiter(',');
    app.add_option("--alphas", o.alphas, "bias: initialization scales (Delta0 = alpha)")->delimiter(',');
    app.add_option("--coordinate", o.coordinate, "crossings: coordinate to export (1-based)")
        ->check(CLI::PositiveNumber);
    app.add_option("--model", o.model, "bias: dln | redundant")->check(CLI::IsMember({"dln", "redundant"}));

    auto* sim = app.add_subcommand("simulate", "Integrate the flow and run every diagnostic")->fallthrough();
    auto* cross = app.add_subcommand("crossings", "Node trajectories and sign census")->fallthrough();
    auto* conv = app.add_subcommand("convergence", "Loss gap against the PL rate bound")->fallthrough();
    auto* bias = app.add_subcommand("bias", "Flow limit vs KKT solution, L1/L2 regimes")->fallthrough();
    auto* pcheck = app.add_subcommand("paramcheck", "Certify the commuting/regular parameterization")->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return 2;
    }

    ExperimentConfig cfg;
    try {
        const auto defaults = [&](int L, int d, int n, double t) {
            if (!layers->count()) o.layers = L;
            if (!dim->count()) o.dim = d;
            if (!samples->count()) o.samples = n;
            if (!tmax->count()) o.tmax = t;
        };
        if (*sim) {
            cfg.experiment = ExperimentKind::simulate;
        } else if (*cross) {
            cfg.experiment = ExperimentKind::crossings;
            defaults(4, 5, 10, 10.0);
        } else if (*conv) {
            cfg.experiment = ExperimentKind::convergence;
            defaults(6, 8, 10, 5000.0);
            if (!scheme->count()) o.init_scheme = "fig3";
            if (!adaptive->count() && !step->count()) o.adaptive = true;
        } else if (*bias) {
            cfg.experiment = ExperimentKind::bias;
            defaults(o.model == "redundant" ? 3 : 2, 6, 3, 1e5);
        } else if (*pcheck) {
            cfg.experiment = ExperimentKind::paramcheck;
        }

        if (!o.init_file.empty()) {
            const Matrix values = read_init_file(o.init_file);
            if (layers->count() && values.rows() != o.layers) throw UsageError("--init-file layer count differs from --layers");
            if (dim->count() && values.cols() != o.dim) throw UsageError("--init-file dimension differs from --dim");
            o.layers = static_cast<int>(values.rows());
            o.dim = static_cast<int>(values.cols());
            cfg.init = InitScheme{InitKind::explicit_values, o.init_scale, values};
        } else {
            const std::map<std::string, InitKind> kinds{{"uniform", InitKind::uniform},
                                                        {"fig3", InitKind::fig3},
                                                        {"positive", InitKind::positive}};
            if (o.init_scheme == "explicit") throw UsageError("--init-scheme explicit requires --init-file");
            cfg.init = InitScheme{kinds.at(o.init_scheme), o.init_scale, {}};
        }
        if (o.coordinate > o.dim) throw UsageError("--coordinate exceeds --dim");

        cfg.L = o.layers;
        cfg.d = o.dim;
        cfg.n = o.samples;
        cfg.seed = o.seed;
        cfg.t_max = o.tmax;
        cfg.h = o.step;
        cfg.adaptive = o.adaptive;
        cfg.scales = o.scales;
        cfg.alphas = o.alphas;
        cfg.coordinate = o.coordinate - 1;
        cfg.bias_model = o.model == "redundant" ? BiasModel::redundant : BiasModel::two_layer;
        cfg.output_path = o.output;
        cfg.diagnostics_path = o.diagnostics;
        cfg.validate();
        if (cfg.experiment == ExperimentKind::bias && cfg.n >= cfg.d) {
            throw UsageError("bias needs --samples < --dim (underdetermined system)");
        }
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        switch (cfg.experiment) {
        case ExperimentKind::simulate: return run_simulate(cfg, out);
        case ExperimentKind::crossings: return run_crossings_cmd(cfg, out);
        case ExperimentKind::convergence: return run_convergence_cmd(cfg, out);
        case ExperimentKind::bias: return run_bias_cmd(cfg, out);
        case ExperimentKind::paramcheck: return run_paramcheck_cmd(cfg, out);
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace ddln
