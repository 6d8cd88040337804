// lva: generators, training, closed-form adaptation, bound checks and benchmarks.
//
// Exit codes: 0 success, 1 verification or benchmark check failed, 2 usage error,
// 3 data/model error. Data goes to stdout, diagnostics to stderr.

#include "lva/bench.hpp"
#include "lva/conv.hpp"
#include "lva/errors.hpp"
#include "lva/report.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using json = nlohmann::json;
using namespace lva;

enum Exit { kOk = 0, kCheckFailed = 1, kUsage = 2, kDataError = 3 };

constexpr const char* kVersion = "1.0.0";

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Small helpers

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << text;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::vector<int> parse_int_list(const std::string& text, const char* what) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw UsageError(std::string(what) + ": '" + item + "' is not an integer");
        }
    }
    if (out.empty()) throw UsageError(std::string(what) + ": empty list");
    return out;
}

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

long elapsed_ms(std::chrono::steady_clock::time_point start) {
    return static_cast<long>(
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count());
}

int resolve_threads() {
    const char* env = std::getenv("LVA_THREADS");
    if (!env || !*env) return 1;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw UsageError("LVA_THREADS must be a positive integer");
    // The numerical kernels are single-threaded by design (fixed summation order), so
    // the cap is always honored; Eigen only spawns threads when built with OpenMP.
    Eigen::setNbThreads(static_cast<int>(v));
    return static_cast<int>(v);
}

std::string manifest_path(const std::string& explicit_path, const std::string& out, const std::string& command) {
    if (!explicit_path.empty()) return explicit_path;
    if (!out.empty()) return out + ".manifest.json";
    return "lva_" + command + ".manifest.json";
}

void write_manifest(const std::string& path, const std::string& command, json config, int threads) {
    json doc{{"tool", "lva"}, {"version", kVersion}, {"command", command}, {"threads", threads}, {"config", std::move(config)}};
    write_text(path, dump_json(doc));
}

// ---------------------------------------------------------------------------
// Datasets: a CSV file or a named generator.

struct DataOptions {
    int n = 2000;             // signal samples
    int images = 64;          // blur images
    int image_size = 16;
    double sigma_source = 1.0;
    double sigma_target = 1.6;
    std::uint64_t seed = 0;

    json to_json() const {
        return json{{"n", n}, {"images", images}, {"image_size", image_size}, {"sigma_source", sigma_source},
                    {"sigma_target", sigma_target}, {"seed", seed}};
    }
};

const std::vector<std::string> kGenerators{"signal-source", "signal-target", "blur-source", "blur-target"};

bool is_blur(const std::string& gen) { return gen.rfind("blur-", 0) == 0; }

PairedDataset generate(const std::string& gen, const DataOptions& o) {
    if (gen == "signal-source") return bench::gen_signal({o.n, o.seed, bench::Domain::Source});
    if (gen == "signal-target") return bench::gen_signal({o.n, o.seed, bench::Domain::Target});
    if (is_blur(gen)) {
        // BlurSpec demands a blurrier target; the source generator only uses sigma_source.
        const double target_sigma = std::max(o.sigma_target, o.sigma_source * (1.0 + 1e-12));
        auto [s, t] = bench::gen_blur_pairs({o.image_size, o.images, o.sigma_source, target_sigma, o.seed});
        return gen == "blur-source" ? s : t;
    }
    throw UsageError("unknown generator '" + gen + "'");
}

PairedDataset load_data(const std::string& file, const std::string& gen, const DataOptions& o, const char* role) {
    if (!file.empty() && !gen.empty()) throw UsageError(std::string(role) + ": give either a file or a generator, not both");
    if (file.empty() && gen.empty()) throw UsageError(std::string(role) + ": a dataset file or generator is required");
    PairedDataset d = file.empty() ? generate(gen, o) : load_dataset(file);
    d.validate();
    return d;
}

void add_data_options(CLI::App* cmd, DataOptions& o) {
    cmd->add_option("--seed", o.seed, "Seed for generators, initialization and shuffling")->capture_default_str();
    cmd->add_option("--n", o.n, "Samples drawn by the signal generators")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--images", o.images, "Images drawn by the blur generators")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--image-size", o.image_size, "Side length of generated images")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--sigma-source", o.sigma_source, "Blur of the source domain")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--sigma-target", o.sigma_target, "Blur of the target domain")->capture_default_str()->check(CLI::PositiveNumber);
}

// ---------------------------------------------------------------------------
// Models

struct AnyModel {
    std::optional<Mlp> mlp;
    std::optional<CnnModel> cnn;
};

AnyModel load_model(const std::string& path) {
    const std::string text = read_text(path);
    AnyModel m;
    if (model_kind(text) == "cnn") {
        m.cnn = deserialize_cnn(text);
    } else {
        m.mlp = deserialize(text);
    }
    return m;
}

json train_report_json(const TrainReport& r, int epochs) {
    return json{{"epochs", epochs}, {"final_loss", r.final_loss}, {"epsilon_trained", r.epsilon_trained},
                {"loss_history", r.loss_history}};
}

double delta_norm(const Matrix& dw, const Vector& db) { return std::sqrt(dw.squaredNorm() + db.squaredNorm()); }

// ---------------------------------------------------------------------------
// gen

struct GenArgs {
    std::string name, out;
    DataOptions data;
};

int run_gen(const GenArgs& a, int threads) {
    const PairedDataset d = generate(a.name, a.data);
    json cfg{{"generator", a.name}, {"data", a.data.to_json()}, {"out", a.out}};
    if (a.out.empty()) {
        std::cout << to_csv(d);
    } else {
        save_dataset(d, a.out);
        write_manifest(manifest_path("", a.out, "gen"), "gen", cfg, threads);
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// pretrain

struct PretrainArgs {
    std::string data_file, gen, out, report, manifest, model_type = "auto";
    DataOptions data;
    std::optional<int> epochs, batch;
    std::optional<double> lr;
    int hidden = 64;
    int hidden_layers = 2;
    std::string kernels = "9,5,5", channels = "8,8";
    bool no_polish = false;
};

int run_pretrain(const PretrainArgs& a, int threads) {
    if (a.out.empty()) throw UsageError("pretrain: --out is required");
    const PairedDataset d = load_data(a.data_file, a.gen, a.data, "pretrain");
    const bool cnn = a.model_type == "cnn" || (a.model_type == "auto" && is_blur(a.gen));
    TrainConfig cfg;
    cfg.seed = a.data.seed;
    cfg.epochs = a.epochs.value_or(cnn ? 200 : 8000);
    cfg.batch_size = a.batch.value_or(cnn ? 16 : 64);
    cfg.learning_rate = a.lr.value_or(cnn ? 3e-3 : 1e-3);
    cfg.validate();

    json config{{"data_file", a.data_file}, {"generator", a.gen}, {"data", a.data.to_json()},
                {"model_type", cnn ? "cnn" : "mlp"}, {"epochs", cfg.epochs}, {"batch_size", cfg.batch_size},
                {"learning_rate", cfg.learning_rate}, {"optimizer", "adam"},
                {"adam", {{"beta1", cfg.adam.beta1}, {"beta2", cfg.adam.beta2}, {"epsilon", cfg.adam.epsilon}}},
                {"out", a.out}};
    const std::string report_path = a.report.empty() ? a.out + ".train.json" : a.report;
    config["report"] = report_path;

    TrainReport report;
    if (cnn) {
        const int side = a.data.image_size;
        const ImageShape shape{side, side, 1};
        if (d.input_dim() != shape.size()) throw ShapeError("pretrain: dataset rows do not match --image-size");
        const std::vector<int> kernels = parse_int_list(a.kernels, "--kernels");
        std::vector<int> channels{1};
        for (int c : parse_int_list(a.channels, "--channels")) channels.push_back(c);
        channels.push_back(1);
        if (channels.size() != kernels.size() + 1) throw UsageError("pretrain: --channels needs one entry per hidden layer");
        auto [trained, rep] = pretrain_cnn(make_cnn(kernels, channels, Activation::relu(), a.data.seed), d, shape, cfg);
        if (!a.no_polish) {
            trained = refit_last_kernel(trained, d, shape);
            rep.final_loss = pixel_mse(trained, d, shape);
            rep.epsilon_trained = std::sqrt(static_cast<double>(d.labels.size()) * rep.final_loss);
        }
        report = rep;
        save_cnn(trained, shape, a.out);
        config["kernels"] = kernels;
        config["channels"] = channels;
        config["polish_last_kernel"] = !a.no_polish;
    } else {
        std::vector<Eigen::Index> dims{d.input_dim()};
        for (int l = 0; l < a.hidden_layers; ++l) dims.push_back(a.hidden);
        dims.push_back(d.label_dim());
        auto [trained, rep] = pretrain(make_mlp(dims, Activation::relu(), Activation::identity(), a.data.seed), d, cfg);
        report = rep;
        save_mlp(trained, a.out);
        config["dims"] = dims;
    }
    write_text(report_path, dump_json(train_report_json(report, cfg.epochs)));
    write_manifest(manifest_path(a.manifest, a.out, "pretrain"), "pretrain", config, threads);
    std::cerr << "pretrain: final loss " << report.final_loss << " after " << cfg.epochs << " epochs\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// adapt

struct AdaptArgs {
    std::string model, source_file, source_gen, target_file, target_gen;
    std::string method = "lva1", align = "nn", variant = "latent";
    std::string out, result, report, manifest;
    DataOptions data;
    double ridge = 0.0, penultimate_ridge = 1e-3, sinkhorn_reg = 0.05, label_weight = 1.0;
    int sinkhorn_iters = 200, layers = 1, sweeps = 3;
    int epochs = 12000, batch = 64;
    double lr = 1e-3;
    bool no_bias = false, print_json = false;
};

Alignment make_alignment(const std::string& mode, const PairedDataset& s, const PairedDataset& t, double reg, int iters,
                         double label_weight) {
    const JointMetric metric{label_weight};
    if (mode == "sinkhorn") return align_sinkhorn(s, t, reg, iters, 1e-9, metric);
    return align_nearest(s, t, metric);
}

int run_adapt(const AdaptArgs& a, int threads) {
    if (a.out.empty()) throw UsageError("adapt: --out is required");
    if (a.model.empty()) throw UsageError("adapt: --model is required");
    const AnyModel model = load_model(a.model);
    const PairedDataset source = load_data(a.source_file, a.source_gen, a.data, "source");
    const PairedDataset target = load_data(a.target_file, a.target_gen, a.data, "target");

    json config{{"model", a.model}, {"source_file", a.source_file}, {"source_generator", a.source_gen},
                {"target_file", a.target_file}, {"target_generator", a.target_gen}, {"data", a.data.to_json()},
                {"method", a.method}, {"align", a.align}, {"variant", a.variant}, {"ridge", a.ridge},
                {"bias_column", !a.no_bias}, {"label_weight", a.label_weight}, {"sinkhorn_reg", a.sinkhorn_reg},
                {"sinkhorn_iters", a.sinkhorn_iters}, {"out", a.out}};
    const std::string result_path = a.result.empty() ? a.out + ".result.json" : a.result;
    config["result"] = result_path;

    json result{{"method", a.method}, {"budget", target.size()}, {"seed", a.data.seed}};
    const auto start = std::chrono::steady_clock::now();

    if (model.cnn) {
        const CnnModel& f = *model.cnn;
        const ImageShape& shape = f.input_shape;
        result["model"] = "cnn";
        Cnn g = f.cnn;
        if (a.method == "lva-conv") {
            const Alignment al = make_alignment(a.align, source, target, a.sinkhorn_reg, a.sinkhorn_iters, a.label_weight);
            const ConvLvaResult r = lva_conv_last_layer(f.cnn, al, source, target, shape, a.ridge, !a.no_bias);
            g = f.cnn.with_last_kernel(r.kernel);
            double sq = r.delta.bias.squaredNorm();
            for (double w : r.delta.weights) sq += w * w;
            result["delta_norms"] = json::array({json{{"layer", f.cnn.num_layers() - 1}, {"norm", std::sqrt(sq)}}});
            result["solve"] = to_json(r.solve);
            result["alignment"] = {{"epsilon_data", al.epsilon_data}, {"converged", al.converged}, {"iterations", al.iterations}};
            result["bias_column"] = !a.no_bias;
            result["align"] = a.align;
        } else if (a.method == "gd") {
            if (a.layers != 1) throw UnsupportedModelError("adapt: CNN gradient descent finetunes the last layer only");
            TrainConfig cfg;
            cfg.epochs = a.epochs;
            cfg.learning_rate = a.lr;
            cfg.batch_size = a.batch;
            cfg.seed = a.data.seed;
            g = finetune_cnn_last(f.cnn, target, shape, cfg).first;
            config["epochs"] = a.epochs;
            config["learning_rate"] = a.lr;
            config["batch_size"] = a.batch;
        } else {
            throw UnsupportedModelError("adapt: method '" + a.method + "' needs an MLP model, got a CNN");
        }
        result["runtime_ms"] = elapsed_ms(start);
        const double mse = pixel_mse(g, target, shape);
        result["loss"] = mse;
        result["psnr"] = psnr(mse);
        save_cnn(g, shape, a.out);
    } else {
        const Mlp& f = *model.mlp;
        const std::size_t n = f.num_layers();
        result["model"] = "mlp";
        if (a.method == "lva-conv") throw UnsupportedModelError("adapt: lva-conv needs a CNN model, got an MLP");
        LvaOptions opt;
        opt.ridge = a.ridge;
        opt.bias_column = !a.no_bias;
        opt.variant = a.variant == "input" ? ResidueVariant::InputJacobian : ResidueVariant::LatentJacobian;
        opt.penultimate_ridge = a.penultimate_ridge;
        std::optional<Mlp> g;
        std::size_t r = 1;
        std::optional<Alignment> al;
        if (a.method == "gd") {
            if (a.layers < 1 || static_cast<std::size_t>(a.layers) > n) throw UsageError("adapt: --layers must lie in [1, n]");
            TrainConfig cfg;
            cfg.epochs = a.epochs;
            cfg.learning_rate = a.lr;
            cfg.batch_size = a.batch;
            cfg.seed = a.data.seed;
            for (std::size_t l = n - static_cast<std::size_t>(a.layers) + 1; l <= n; ++l) cfg.trainable_layers.insert(l);
            g = finetune_gd(f, target, cfg).first;
            r = static_cast<std::size_t>(a.layers);
            config["layers"] = a.layers;
            config["epochs"] = a.epochs;
            config["learning_rate"] = a.lr;
            config["batch_size"] = a.batch;
        } else {
            al = make_alignment(a.align, source, target, a.sinkhorn_reg, a.sinkhorn_iters, a.label_weight);
            result["alignment"] = {{"epsilon_data", al->epsilon_data}, {"converged", al->converged}, {"iterations", al->iterations}};
            result["bias_column"] = opt.bias_column;
            result["variant"] = to_string(opt.variant);
            result["align"] = a.align;
            if (a.method == "lva1") {
                LvaResult res = lva_one_layer(f, *al, source, target, opt);
                result["solve"] = to_json(res.solve);
                g = std::move(res.adapted);
            } else if (a.method == "lva2") {
                LvaTwoLayerResult res = lva_two_layer(f, *al, source, target, a.sweeps, opt);
                result["objective_history"] = res.objective_history;
                result["accepted_scale"] = res.accepted_scale;
                result["one_layer_loss"] = res.one_layer_loss;
                g = std::move(res.adapted);
                r = 2;
                config["sweeps"] = a.sweeps;
                config["penultimate_ridge"] = a.penultimate_ridge;
            } else {
                throw UsageError("adapt: unknown method '" + a.method + "'");
            }
        }
        result["runtime_ms"] = elapsed_ms(start);
        result["loss"] = mse_loss(*g, target);
        json norms = json::array();
        for (std::size_t l = 0; l < n; ++l) {
            const double dn = delta_norm(g->layer(l).weight - f.layer(l).weight, g->layer(l).bias - f.layer(l).bias);
            if (l + r >= n) norms.push_back({{"layer", l}, {"norm", dn}});
        }
        result["delta_norms"] = norms;
        save_mlp(*g, a.out);

        if (!al) al = make_alignment(a.align, source, target, a.sinkhorn_reg, a.sinkhorn_iters, a.label_weight);
        const TheoryReport rep = verify_transfer_bound(f, *g, r, *al, source, target);
        const std::string report_path = a.report.empty() ? a.out + ".report.json" : a.report;
        write_text(report_path, dump_json(to_json(rep)));
        config["report"] = report_path;
    }

    write_text(result_path, dump_json(result));
    write_manifest(manifest_path(a.manifest, a.out, "adapt"), "adapt", config, threads);
    if (a.print_json) std::cout << dump_json(result);
    std::cerr << "adapt: " << a.method << " target loss " << result["loss"].get<double>() << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyArgs {
    std::string pretrained, adapted, source_file, source_gen, target_file, target_gen, test_file, test_gen;
    std::string kind = "transfer", align = "nn", out, manifest;
    DataOptions data;
    int layers = 0;  // 0: infer from the models
    double label_weight = 1.0, sinkhorn_reg = 0.05;
    int sinkhorn_iters = 200;
    std::uint64_t test_seed = 1;
    bool print_json = false;
};

int run_verify(const VerifyArgs& a, int threads) {
    if (a.adapted.empty()) throw UsageError("verify: --adapted is required");
    const AnyModel gm = load_model(a.adapted);
    if (!gm.mlp) throw UnsupportedModelError("verify: bound checks are implemented for MLP models");
    const Mlp& g = *gm.mlp;
    const PairedDataset target = load_data(a.target_file, a.target_gen, a.data, "target");
    json config{{"kind", a.kind}, {"adapted", a.adapted}, {"target_file", a.target_file}, {"target_generator", a.target_gen},
                {"data", a.data.to_json()}, {"out", a.out}};

    TheoryReport rep;
    if (a.kind == "generalization") {
        DataOptions test_opts = a.data;
        test_opts.seed = a.test_seed;
        const PairedDataset test = load_data(a.test_file, a.test_gen, test_opts, "test");
        rep = verify_generalization_bound(g, target, test);
        config["test_file"] = a.test_file;
        config["test_generator"] = a.test_gen;
        config["test_seed"] = a.test_seed;
    } else {
        if (a.pretrained.empty()) throw UsageError("verify: --pretrained is required for the transfer bound");
        const AnyModel fm = load_model(a.pretrained);
        if (!fm.mlp) throw UnsupportedModelError("verify: bound checks are implemented for MLP models");
        const Mlp& f = *fm.mlp;
        const PairedDataset source = load_data(a.source_file, a.source_gen, a.data, "source");
        std::size_t r = static_cast<std::size_t>(a.layers);
        if (a.layers == 0) {
            // Smallest trailing block that contains every changed layer.
            r = 1;
            if (f.num_layers() == g.num_layers()) {
                for (std::size_t l = 0; l < f.num_layers(); ++l) {
                    const bool same = f.layer(l).weight.rows() == g.layer(l).weight.rows() &&
                                      f.layer(l).weight.cols() == g.layer(l).weight.cols() &&
                                      f.layer(l).weight == g.layer(l).weight && f.layer(l).bias == g.layer(l).bias;
                    if (!same) {
                        r = std::max<std::size_t>(r, f.num_layers() - l);
                        break;
                    }
                }
            }
        }
        const Alignment al = make_alignment(a.align, source, target, a.sinkhorn_reg, a.sinkhorn_iters, a.label_weight);
        rep = verify_transfer_bound(f, g, r, al, source, target);
        config["pretrained"] = a.pretrained;
        config["source_file"] = a.source_file;
        config["source_generator"] = a.source_gen;
        config["layers"] = r;
        config["align"] = a.align;
        config["label_weight"] = a.label_weight;
    }
    const std::string text = dump_json(to_json(rep));
    if (!a.out.empty()) write_text(a.out, text);
    if (a.print_json || a.out.empty()) std::cout << text;
    write_manifest(manifest_path(a.manifest, a.out, "verify"), "verify", config, threads);
    std::cerr << "verify: lhs " << rep.observed_loss << (rep.holds ? " <= " : " > ") << "rhs " << rep.rhs_bound << "\n";
    return rep.holds ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
    std::string name, out, manifest, seeds, budgets = "16,64,256";
    std::uint64_t seed = 0;
    std::optional<int> epochs, gd_epochs, samples;
    bool no_gd2 = false, no_runtime = false, check = false, print_json = false;
};

double loss_of(const std::vector<bench::BenchResult>& rows, const std::string& method, int budget = -1) {
    for (const auto& r : rows)
        if (r.method == method && (budget < 0 || r.budget == budget)) return r.target_loss;
    return std::nan("");
}

int run_bench(const BenchArgs& a, int threads) {
    std::vector<std::uint64_t> seeds;
    if (a.seeds.empty()) {
        seeds.push_back(a.seed);
    } else {
        for (int s : parse_int_list(a.seeds, "--seeds")) {
            if (s < 0) throw UsageError("--seeds: seeds must be non-negative");
            seeds.push_back(static_cast<std::uint64_t>(s));
        }
    }
    json config{{"benchmark", a.name}, {"seeds", seeds}, {"out", a.out}, {"include_runtime", !a.no_runtime}};
    std::vector<bench::BenchResult> rows;
    json reports = json::array();
    bool ok = true;

    if (a.name == "1d") {
        bench::Bench1dOptions opt;
        opt.with_gd2 = !a.no_gd2;
        if (a.epochs) opt.pretrain_epochs = *a.epochs;
        if (a.gd_epochs) opt.gd_epochs = *a.gd_epochs;
        if (a.samples) opt.samples = *a.samples;
        config["options"] = {{"samples", opt.samples}, {"test_samples", opt.test_samples},
                             {"pretrain_epochs", opt.pretrain_epochs}, {"gd_epochs", opt.gd_epochs},
                             {"learning_rate", opt.learning_rate}, {"batch_size", opt.batch_size}, {"hidden", opt.hidden},
                             {"sweeps", opt.sweeps}, {"ridge", opt.ridge}, {"two_layer_ridge", opt.two_layer_ridge},
                             {"sinkhorn_reg", opt.sinkhorn_reg}, {"sinkhorn_iters", opt.sinkhorn_iters},
                             {"with_gd2", opt.with_gd2}};
        for (std::uint64_t seed : seeds) {
            const bench::Bench1dOutcome out = bench::run_benchmark_1d(seed, opt);
            rows.insert(rows.end(), out.results.begin(), out.results.end());
            reports.push_back({{"seed", seed}, {"pretrain_final_loss", out.pretrain_report.final_loss},
                               {"transfer", to_json(out.transfer)}, {"generalization", to_json(out.generalization)}});
            const bool order = loss_of(out.results, "LVA1") < loss_of(out.results, "GD") &&
                               loss_of(out.results, "LVA2") <= loss_of(out.results, "LVA1") + 1e-9;
            ok = ok && order && out.transfer.holds && out.generalization.holds;
        }
    } else if (a.name == "deblur") {
        bench::BenchDeblurOptions opt;
        opt.budgets = parse_int_list(a.budgets, "--budgets");
        for (int b : opt.budgets)
            if (b < 1) throw UsageError("--budgets: budgets must be positive");
        if (a.epochs) opt.pretrain_epochs = *a.epochs;
        if (a.gd_epochs) opt.gd_epochs = *a.gd_epochs;
        config["options"] = {{"image_size", opt.image_size}, {"pretrain_images", opt.pretrain_images},
                             {"test_images", opt.test_images}, {"budgets", opt.budgets},
                             {"sigma_source", opt.sigma_source}, {"sigma_target", opt.sigma_target},
                             {"pretrain_epochs", opt.pretrain_epochs}, {"pretrain_batch", opt.pretrain_batch},
                             {"pretrain_lr", opt.pretrain_lr}, {"gd_epochs", opt.gd_epochs}, {"gd_lr", opt.gd_lr},
                             {"kernel_sizes", opt.kernel_sizes}, {"channels", opt.channels}, {"ridge", opt.ridge}};
        for (std::uint64_t seed : seeds) {
            const bench::BenchDeblurOutcome out = bench::run_benchmark_deblur(seed, opt);
            rows.insert(rows.end(), out.results.begin(), out.results.end());
            reports.push_back({{"seed", seed}, {"pretrained_source_mse", out.pretrained_source_mse},
                               {"pretrained_target_mse", out.pretrained_target_mse},
                               {"identity_delta_norm", out.identity_delta_norm}});
            const int top = *std::max_element(opt.budgets.begin(), opt.budgets.end());
            ok = ok && loss_of(out.results, "LVA", top) <= loss_of(out.results, "GD", top) && out.identity_delta_norm < 1e-6;
        }
    } else {
        throw UsageError("bench: unknown benchmark '" + a.name + "' (expected 1d or deblur)");
    }

    const std::string csv = bench::results_csv(rows, !a.no_runtime);
    json rows_json = json::array();
    for (auto r : rows) {
        if (a.no_runtime) r.runtime_ms = 0;
        rows_json.push_back(to_json(r));
    }
    const json doc{{"benchmark", a.name}, {"results", rows_json}, {"reports", reports}, {"checks_pass", ok}};
    if (!a.out.empty()) {
        write_text(a.out, csv);
        write_text(a.out + ".json", dump_json(doc));
    }
    if (a.print_json) {
        std::cout << dump_json(doc);
    } else if (a.out.empty()) {
        std::cout << csv;
    }
    write_manifest(manifest_path(a.manifest, a.out, "bench"), "bench", config, threads);
    std::cerr << bench::summary_table(rows) << "checks " << (ok ? "pass" : "FAIL") << "\n";
    return a.check && !ok ? kCheckFailed : kOk;
}

// ---------------------------------------------------------------------------

void add_source_target(CLI::App* cmd, std::string& sf, std::string& sg, std::string& tf, std::string& tg) {
    cmd->add_option("--source", sf, "Source dataset CSV");
    cmd->add_option("--source-gen", sg, "Source generator")->check(CLI::IsMember(kGenerators));
    cmd->add_option("--target", tf, "Target dataset CSV");
    cmd->add_option("--target-gen", tg, "Target generator")->check(CLI::IsMember(kGenerators));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer variational analysis: closed-form transfer-learning adaptation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen", "Write a generated dataset as CSV");
    gen_cmd->add_option("name", gen.name, "Generator")->required()->check(CLI::IsMember(kGenerators));
    gen_cmd->add_option("--out", gen.out, "Output CSV (stdout when omitted)");
    add_data_options(gen_cmd, gen.data);

    PretrainArgs pre;
    auto* pre_cmd = app.add_subcommand("pretrain", "Train a model on a source dataset");
    pre_cmd->add_option("--data", pre.data_file, "Training dataset CSV");
    pre_cmd->add_option("--gen", pre.gen, "Training data generator")->check(CLI::IsMember(kGenerators));
    pre_cmd->add_option("--model-type", pre.model_type, "mlp, cnn or auto (cnn for blur generators)")
        ->capture_default_str()->check(CLI::IsMember({"auto", "mlp", "cnn"}));
    pre_cmd->add_option("--epochs", pre.epochs, "Epochs (default 8000 MLP, 200 CNN)");
    pre_cmd->add_option("--batch", pre.batch, "Mini-batch size (default 64 MLP, 16 CNN)");
    pre_cmd->add_option("--lr", pre.lr, "Adam learning rate (default 1e-3 MLP, 3e-3 CNN)");
    pre_cmd->add_option("--hidden", pre.hidden, "MLP hidden width")->capture_default_str()->check(CLI::PositiveNumber);
    pre_cmd->add_option("--hidden-layers", pre.hidden_layers, "MLP hidden layers")->capture_default_str()->check(CLI::NonNegativeNumber);
    pre_cmd->add_option("--kernels", pre.kernels, "CNN kernel sizes")->capture_default_str();
    pre_cmd->add_option("--channels", pre.channels, "CNN hidden channel counts")->capture_default_str();
    pre_cmd->add_flag("--no-polish", pre.no_polish, "Skip the least-squares refit of the last CNN kernel");
    pre_cmd->add_option("--out", pre.out, "Output model JSON");
    pre_cmd->add_option("--report", pre.report, "Training report JSON (default <out>.train.json)");
    pre_cmd->add_option("--manifest", pre.manifest, "Manifest path (default <out>.manifest.json)");
    add_data_options(pre_cmd, pre.data);

    AdaptArgs ad;
    auto* ad_cmd = app.add_subcommand("adapt", "Adapt a pretrained model to a target dataset");
    ad_cmd->add_option("--model", ad.model, "Pretrained model JSON");
    add_source_target(ad_cmd, ad.source_file, ad.source_gen, ad.target_file, ad.target_gen);
    ad_cmd->add_option("--method", ad.method, "gd, lva1, lva2 or lva-conv")
        ->capture_default_str()->check(CLI::IsMember({"gd", "lva1", "lva2", "lva-conv"}));
    ad_cmd->add_option("--align", ad.align, "Sample alignment: nn or sinkhorn")
        ->capture_default_str()->check(CLI::IsMember({"nn", "sinkhorn"}));
    ad_cmd->add_option("--variant", ad.variant, "Residue Jacobian: latent or input")
        ->capture_default_str()->check(CLI::IsMember({"latent", "input"}));
    ad_cmd->add_option("--ridge", ad.ridge, "Ridge on the last-layer solve")->capture_default_str()->check(CLI::NonNegativeNumber);
    ad_cmd->add_option("--penultimate-ridge", ad.penultimate_ridge, "Ridge on the penultimate correction (lva2)")
        ->capture_default_str()->check(CLI::NonNegativeNumber);
    ad_cmd->add_flag("--no-bias", ad.no_bias, "Regress without the bias column");
    ad_cmd->add_option("--layers", ad.layers, "Trailing layers finetuned by gd")->capture_default_str();
    ad_cmd->add_option("--sweeps", ad.sweeps, "Two-layer sweeps (lva2)")->capture_default_str()->check(CLI::NonNegativeNumber);
    ad_cmd->add_option("--epochs", ad.epochs, "GD epochs")->capture_default_str()->check(CLI::PositiveNumber);
    ad_cmd->add_option("--lr", ad.lr, "GD learning rate")->capture_default_str()->check(CLI::PositiveNumber);
    ad_cmd->add_option("--batch", ad.batch, "GD mini-batch size")->capture_default_str()->check(CLI::PositiveNumber);
    ad_cmd->add_option("--sinkhorn-reg", ad.sinkhorn_reg, "Entropic regularization")->capture_default_str()->check(CLI::PositiveNumber);
    ad_cmd->add_option("--sinkhorn-iters", ad.sinkhorn_iters, "Sinkhorn iterations")->capture_default_str()->check(CLI::PositiveNumber);
    ad_cmd->add_option("--label-weight", ad.label_weight, "Label weight of the joint metric")->capture_default_str()->check(CLI::PositiveNumber);
    ad_cmd->add_option("--out", ad.out, "Adapted model JSON");
    ad_cmd->add_option("--result", ad.result, "Result JSON (default <out>.result.json)");
    ad_cmd->add_option("--report", ad.report, "Bound report JSON (default <out>.report.json)");
    ad_cmd->add_option("--manifest", ad.manifest, "Manifest path (default <out>.manifest.json)");
    ad_cmd->add_flag("--json", ad.print_json, "Print the result JSON on stdout");
    add_data_options(ad_cmd, ad.data);

    VerifyArgs ve;
    auto* ve_cmd = app.add_subcommand("verify", "Check the finetuned-loss bound; exit 0 iff it holds");
    ve_cmd->add_option("--kind", ve.kind, "transfer or generalization")
        ->capture_default_str()->check(CLI::IsMember({"transfer", "generalization"}));
    ve_cmd->add_option("--pretrained", ve.pretrained, "Pretrained model JSON");
    ve_cmd->add_option("--adapted", ve.adapted, "Adapted model JSON");
    add_source_target(ve_cmd, ve.source_file, ve.source_gen, ve.target_file, ve.target_gen);
    ve_cmd->add_option("--test", ve.test_file, "Held-out test CSV (generalization)");
    ve_cmd->add_option("--test-gen", ve.test_gen, "Held-out test generator (generalization)")->check(CLI::IsMember(kGenerators));
    ve_cmd->add_option("--test-seed", ve.test_seed, "Seed of the test generator")->capture_default_str();
    ve_cmd->add_option("--layers", ve.layers, "Finetuned trailing layers r (0 = infer)")->capture_default_str()->check(CLI::NonNegativeNumber);
    ve_cmd->add_option("--align", ve.align, "nn or sinkhorn")->capture_default_str()->check(CLI::IsMember({"nn", "sinkhorn"}));
    ve_cmd->add_option("--sinkhorn-reg", ve.sinkhorn_reg, "Entropic regularization")->capture_default_str()->check(CLI::PositiveNumber);
    ve_cmd->add_option("--sinkhorn-iters", ve.sinkhorn_iters, "Sinkhorn iterations")->capture_default_str()->check(CLI::PositiveNumber);
    ve_cmd->add_option("--label-weight", ve.label_weight, "Label weight of the joint metric")->capture_default_str()->check(CLI::PositiveNumber);
    ve_cmd->add_option("--out", ve.out, "Report JSON path");
    ve_cmd->add_option("--manifest", ve.manifest, "Manifest path");
    ve_cmd->add_flag("--json", ve.print_json, "Print the report JSON on stdout");
    add_data_options(ve_cmd, ve.data);

    BenchArgs be;
    auto* be_cmd = app.add_subcommand("bench", "Run the 1d or deblur benchmark");
    be_cmd->add_option("name", be.name, "1d or deblur")->required();
    be_cmd->add_option("--seed", be.seed, "Seed")->capture_default_str();
    be_cmd->add_option("--seeds", be.seeds, "Comma-separated seeds (overrides --seed)");
    be_cmd->add_option("--budgets", be.budgets, "Deblur sample budgets")->capture_default_str();
    be_cmd->add_option("--epochs", be.epochs, "Pretraining epochs override");
    be_cmd->add_option("--gd-epochs", be.gd_epochs, "GD finetuning epochs override");
    be_cmd->add_option("--samples", be.samples, "1d samples per domain override");
    be_cmd->add_flag("--no-gd2", be.no_gd2, "Skip the two-layer GD baseline (1d)");
    be_cmd->add_flag("--no-runtime", be.no_runtime, "Write 0 in the runtime_ms column");
    be_cmd->add_flag("--check", be.check, "Exit 1 when an ordering or bound check fails");
    be_cmd->add_option("--out", be.out, "Results CSV (stdout when omitted); JSON goes to <out>.json");
    be_cmd->add_option("--manifest", be.manifest, "Manifest path");
    be_cmd->add_flag("--json", be.print_json, "Print results JSON on stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        const int threads = resolve_threads();
        if (*gen_cmd) return run_gen(gen, threads);
        if (*pre_cmd) return run_pretrain(pre, threads);
        if (*ad_cmd) return run_adapt(ad, threads);
        if (*ve_cmd) return run_verify(ve, threads);
        if (*be_cmd) return run_bench(be, threads);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const ArgumentError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const TrainingError& e) {
        std::cerr << "training error: " << e.what() << " (last finite epoch " << e.last_finite_epoch() << ")\n";
        return kDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    }
    return kUsage;
}
