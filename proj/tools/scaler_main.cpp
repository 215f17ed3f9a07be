// scaler: dataset generation, training, evaluation, ablation sweeps and
// standalone mask refinement, all driven by one --seed per invocation.
//
// Exit codes: 0 success, 2 usage, 3 I/O, 4 numeric, 5 artifact mismatch.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "run_config.hpp"
#include "scaler/error.hpp"
#include "scaler/metrics.hpp"
#include "scaler/pseudolabel.hpp"
#include "scaler/rng.hpp"
#include "scaler/synthdata.hpp"
#include "scaler/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scaler;

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << text;
    if (!os) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------- gen-data

struct GenOpts {
    std::string out;
    int64_t n = 160;
    int64_t side = 64;
    double contrast = 0.2; // sets lo == hi
    double contrast_lo = -1.0, contrast_hi = -1.0;
    std::string annotation = "point";
    uint64_t seed = 0;
    bool aux = false;
    bool contrast_set = false, range_set = false;
};

void cmd_gen_data(const GenOpts& o) {
    if (o.contrast_set && (o.range_set || o.aux))
        throw UsageError("--contrast conflicts with --contrast-lo/--contrast-hi/--aux-distribution");
    if (o.range_set && o.aux)
        throw UsageError("--contrast-lo/--contrast-hi conflict with --aux-distribution");
    DatasetSpec spec;
    spec.count = o.n;
    spec.side = o.side;
    spec.seed = o.seed;
    spec.annotation = annotation_mode_from(o.annotation);
    if (o.aux) {
        spec.contrast_lo = 0.6; // plainly visible objects, as used for pre-training
        spec.contrast_hi = 1.0;
    } else if (o.range_set) {
        spec.contrast_lo = o.contrast_lo;
        spec.contrast_hi = o.contrast_hi;
    } else {
        spec.contrast_lo = spec.contrast_hi = o.contrast;
    }
    std::vector<Sample> samples = gen_dataset(spec);
    write_dataset(o.out, spec, samples);
    std::cout << "wrote " << samples.size() << " samples to " << o.out << "\n";
}

// ------------------------------------------------------------------- train

struct TrainOpts {
    std::string config, data, out, test_data;
    bool resume = false;
};

std::vector<Sample> test_set_for(const RunConfig& rc, const std::string& test_data_dir) {
    if (!test_data_dir.empty()) return read_dataset(test_data_dir).samples;
    if (rc.test_count <= 0) return {};
    DatasetSpec spec;
    spec.count = rc.test_count;
    spec.side = rc.side;
    spec.contrast_lo = rc.contrast_lo;
    spec.contrast_hi = rc.contrast_hi;
    spec.annotation = rc.annotation;
    spec.seed = mix_seed(rc.train.seed, {hash_tag("test-data")});
    return gen_dataset(spec);
}

json split_json(const Split& split) {
    return json{{"labeled", split.labeled}, {"unlabeled", split.unlabeled}};
}

json report_set_json(const ModelBundle& bundle, const std::vector<Sample>& samples) {
    json out;
    for (auto which : {WhichModel::Student, WhichModel::Teacher, WhichModel::Generalist}) {
        MetricReport r = evaluate_bundle(bundle, which, samples);
        out[which_model_name(which)] = json::parse(metric_report_json_text(r));
    }
    return out;
}

void cmd_train(const TrainOpts& o) {
    RunConfig rc = load_run_config(o.config);
    LoadedDataset ds = read_dataset(o.data);
    std::vector<Sample> test = test_set_for(rc, o.test_data);

    fs::create_directories(o.out);
    write_text(fs::path(o.out) / "config.echo", echo_run_config(rc));

    Trainer trainer(rc.train, ds.samples, o.out);
    write_text(fs::path(o.out) / "split.json", split_json(trainer.split()).dump(2) + "\n");
    TrainResult res = trainer.run(o.resume);

    json metrics;
    metrics["train"] = report_set_json(res.bundle, ds.samples);
    if (!test.empty()) metrics["test"] = report_set_json(res.bundle, test);
    write_text(fs::path(o.out) / "metrics.json", metrics.dump(2) + "\n");

    std::cout << "train student mae " << fmt(metrics["train"]["student"]["mean"]["mae"].get<double>())
              << "\n";
    if (!test.empty())
        std::cout << "test student mae "
                  << fmt(metrics["test"]["student"]["mean"]["mae"].get<double>()) << "\n";
    std::cout << "checkpoint " << res.checkpoint_dir.string() << "\n";
    std::cout << "metrics " << (fs::path(o.out) / "metrics.json").string() << "\n";
}

// -------------------------------------------------------------------- eval

struct EvalOpts {
    std::string checkpoint, data, model = "student", out;
};

void cmd_eval(const EvalOpts& o) {
    ModelBundle bundle = ModelBundle::load(o.checkpoint);
    LoadedDataset ds = read_dataset(o.data);
    WhichModel which = which_model_from(o.model);
    MetricReport r = evaluate_bundle(bundle, which, ds.samples);
    std::cout << "model " << which_model_name(which) << "\n";
    std::cout << "count " << r.rows.size() << "\n";
    std::cout << "mae " << fmt(r.mae) << "\n";
    std::cout << "f_beta " << fmt(r.f_beta) << "\n";
    std::cout << "e_phi " << fmt(r.e_phi) << "\n";
    std::cout << "s_alpha " << fmt(r.s_alpha) << "\n";
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        write_metric_report_json(fs::path(o.out) / "metrics.json", r);
        write_metric_report_csv(fs::path(o.out) / "metrics.csv", r);
    }
}

// ------------------------------------------------------------------ ablate

struct AblateOpts {
    std::string config, data, out, test_data, model = "student";
    std::vector<std::string> axes;
};

// One switch per study axis; names match the documented ablation table.
TrainConfig config_for_axis(const TrainConfig& base, const std::string& axis) {
    TrainConfig c = base;
    if (axis == "no-plf") c.use_plf = false;
    else if (axis == "no-entropy-weight") c.use_entropy_weight = false;
    else if (axis == "no-uncertainty-weight") c.use_uncertainty_weight = false;
    else if (axis == "no-phase2") c.use_phase2 = false;
    else if (axis == "lai-weak-weak") c.lai_weak_weak = true;
    else if (axis == "lnr-with-refine") c.lnr_with_refine = true;
    else if (axis == "no-stage1") c.no_stage1 = true;
    else if (axis == "no-stage2") c.no_stage2 = true;
    else if (axis == "trust-from-plf") c.trust_from_plf = true;
    else throw UsageError("unknown ablation axis: " + axis);
    return c;
}

void cmd_ablate(const AblateOpts& o) {
    RunConfig rc = load_run_config(o.config);
    WhichModel which = which_model_from(o.model);
    if (o.axes.empty()) throw UsageError("--axes needs at least one axis");
    for (size_t i = 0; i < o.axes.size(); ++i)
        for (size_t j = i + 1; j < o.axes.size(); ++j)
            if (o.axes[i] == o.axes[j]) throw UsageError("duplicate ablation axis: " + o.axes[i]);

    LoadedDataset ds = read_dataset(o.data);
    std::vector<Sample> test = test_set_for(rc, o.test_data);
    const std::vector<Sample>& eval_data = test.empty() ? ds.samples : test;

    fs::create_directories(o.out);
    write_text(fs::path(o.out) / "config.echo", echo_run_config(rc));

    struct Row {
        std::string name;
        MetricReport report;
    };
    std::vector<Row> rows;
    std::vector<std::pair<std::string, TrainConfig>> runs;
    runs.emplace_back("full", rc.train);
    for (const std::string& axis : o.axes) runs.emplace_back(axis, config_for_axis(rc.train, axis));

    for (const auto& [name, cfg] : runs) {
        fs::path run_dir = fs::path(o.out) / "runs" / name;
        fs::create_directories(run_dir);
        TrainResult res = train(cfg, ds.samples, run_dir);
        rows.push_back({name, evaluate_bundle(res.bundle, which, eval_data)});
        std::cout << name << " mae " << fmt(rows.back().report.mae) << "\n";
    }

    // delta_* = axis metric - full metric
    const MetricReport& full = rows.front().report;
    std::ostringstream csv;
    csv << "run,mae,f_beta,e_phi,s_alpha,delta_mae,delta_f_beta,delta_e_phi,delta_s_alpha\n";
    for (const Row& row : rows) {
        const MetricReport& r = row.report;
        csv << row.name << "," << fmt(r.mae) << "," << fmt(r.f_beta) << "," << fmt(r.e_phi) << ","
            << fmt(r.s_alpha) << "," << fmt(r.mae - full.mae) << "," << fmt(r.f_beta - full.f_beta)
            << "," << fmt(r.e_phi - full.e_phi) << "," << fmt(r.s_alpha - full.s_alpha) << "\n";
    }
    write_text(fs::path(o.out) / "ablation.csv", csv.str());
    std::cout << "table " << (fs::path(o.out) / "ablation.csv").string() << "\n";
}

// ------------------------------------------------------------ refine-masks

struct RefineOpts {
    std::vector<std::string> masks;
    std::string op, out;
    double trust_lo = 0.1, trust_hi = 0.9;
};

std::vector<fs::path> list_bin_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".bin")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw UsageError("no .bin mask files in " + dir.string());
    return files;
}

void cmd_refine_masks(const RefineOpts& o) {
    const bool two_dirs = o.op == "consensus";
    if (two_dirs && o.masks.size() != 2)
        throw UsageError("op=consensus requires exactly two --masks directories");
    if (!two_dirs && o.masks.size() != 1)
        throw UsageError("op=" + o.op + " requires exactly one --masks directory");
    fs::create_directories(o.out);

    std::vector<fs::path> files = list_bin_files(o.masks[0]);
    size_t written = 0;

    if (o.op == "entropy") {
        std::ostringstream csv;
        csv << "file,entropy\n";
        for (const fs::path& f : files) csv << f.filename().string() << "," << fmt(entropy(read_tensor_file(f))) << "\n";
        write_text(fs::path(o.out) / "entropy.csv", csv.str());
        written = files.size();
    } else if (o.op == "uncertainty" || o.op == "trust") {
        for (const fs::path& f : files) {
            Tensor m = read_tensor_file(f);
            Tensor out = o.op == "uncertainty" ? uncertainty(m) : trust_mask(m, o.trust_lo, o.trust_hi);
            write_tensor_file(fs::path(o.out) / f.filename(), out);
        }
        written = files.size();
    } else if (o.op == "fuse") {
        // standalone analog of ensemble fusion: the directory holds the
        // already-aligned ensemble members; the output is their mean
        Tensor acc = read_tensor_file(files[0]);
        for (size_t i = 1; i < files.size(); ++i) {
            Tensor m = read_tensor_file(files[i]);
            if (!m.same_shape(acc))
                throw NumericError("fuse needs equal shapes, " + files[i].filename().string() +
                                   " differs");
            for (size_t p = 0; p < acc.data.size(); ++p) acc.data[p] += m.data[p];
        }
        for (double& v : acc.data) v /= static_cast<double>(files.size());
        write_tensor_file(fs::path(o.out) / "fused.bin", acc);
        written = 1;
    } else if (o.op == "consensus") {
        fs::path second(o.masks[1]);
        for (const fs::path& f : files) {
            Tensor a = read_tensor_file(f);
            Tensor b = read_tensor_file(second / f.filename());
            write_tensor_file(fs::path(o.out) / f.filename(), consensus(a, b));
        }
        written = files.size();
    } else {
        throw UsageError("unknown op: " + o.op);
    }
    std::cout << o.op << " wrote " << written << " file" << (written == 1 ? "" : "s") << " to "
              << o.out << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"scaler: label-deficient concealed-object segmentation toolkit"};
    app.require_subcommand(1);

    GenOpts gen;
    CLI::App* g = app.add_subcommand("gen-data", "generate a synthetic dataset directory");
    g->add_option("--out", gen.out, "output directory")->required();
    g->add_option("--n", gen.n, "sample count");
    g->add_option("--side", gen.side, "image side (multiple of 4)");
    CLI::Option* copt = g->add_option("--contrast", gen.contrast, "fg/bg contrast (lo == hi)");
    CLI::Option* clo = g->add_option("--contrast-lo", gen.contrast_lo, "contrast range low end");
    CLI::Option* chi = g->add_option("--contrast-hi", gen.contrast_hi, "contrast range high end");
    g->add_option("--annotation", gen.annotation, "point or scribble");
    g->add_option("--seed", gen.seed, "root seed");
    g->add_flag("--aux-distribution", gen.aux, "high-contrast pre-training distribution (0.6..1)");
    g->callback([&] {
        gen.contrast_set = copt->count() > 0;
        gen.range_set = clo->count() > 0 || chi->count() > 0;
        if (gen.range_set && (clo->count() == 0 || chi->count() == 0))
            throw UsageError("--contrast-lo and --contrast-hi must be given together");
        cmd_gen_data(gen);
    });

    TrainOpts tr;
    CLI::App* t = app.add_subcommand("train", "run the three-stage training procedure");
    t->add_option("--config", tr.config, "key = value config file")->required();
    t->add_option("--data", tr.data, "training dataset directory")->required();
    t->add_option("--out", tr.out, "output directory")->required();
    t->add_option("--test-data", tr.test_data, "held-out dataset directory (optional)");
    t->add_flag("--resume", tr.resume, "resume from the latest checkpoint in --out");
    t->callback([&] { cmd_train(tr); });

    EvalOpts ev;
    CLI::App* e = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    e->add_option("--checkpoint", ev.checkpoint, "checkpoint directory")->required();
    e->add_option("--data", ev.data, "dataset directory")->required();
    e->add_option("--model", ev.model, "student, teacher or generalist");
    e->add_option("--out", ev.out, "write metrics.json/metrics.csv here (optional)");
    e->callback([&] { cmd_eval(ev); });

    AblateOpts ab;
    CLI::App* a = app.add_subcommand("ablate", "train the full method plus one run per axis");
    a->add_option("--config", ab.config, "key = value config file")->required();
    a->add_option("--data", ab.data, "training dataset directory")->required();
    a->add_option("--out", ab.out, "output directory")->required();
    a->add_option("--axes", ab.axes, "comma-separated ablation axes")->required()->delimiter(',');
    a->add_option("--test-data", ab.test_data, "held-out dataset directory (optional)");
    a->add_option("--model", ab.model, "model the table reports (default student)");
    a->callback([&] { cmd_ablate(ab); });

    RefineOpts rf;
    CLI::App* r = app.add_subcommand("refine-masks", "apply mask-quality ops to stored masks");
    r->add_option("--masks", rf.masks, "mask directory (two for op=consensus)")->required();
    r->add_option("--op", rf.op, "entropy, uncertainty, trust, fuse or consensus")->required();
    r->add_option("--out", rf.out, "output directory")->required();
    r->add_option("--trust-lo", rf.trust_lo, "distrusted band low end");
    r->add_option("--trust-hi", rf.trust_hi, "distrusted band high end");
    r->callback([&] { cmd_refine_masks(rf); });

    try {
        app.parse(argc, argv);
        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n\n" << app.help() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const ArtifactError& e) {
        std::cerr << "artifact error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
