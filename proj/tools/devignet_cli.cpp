// devignet command line: synthetic data generation, training, evaluation and
// single-image inference.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <devignet/devignet.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

namespace {

using namespace devignet;

std::vector<int> parse_resolutions(const std::string& spec) {
    std::vector<int> out;
    std::stringstream ss(spec);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (part.empty()) continue;
        try {
            out.push_back(std::stoi(part));
        } catch (const std::exception&) {
            throw UsageError("bad resolution list: " + spec);
        }
    }
    if (out.empty()) throw UsageError("no resolutions given");
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"devignet - frequency-aware vignetting removal"};
    app.require_subcommand(1);

    // synth ------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "generate a synthetic paired vignetting dataset");
    int synth_n = 64, synth_size = 128;
    uint64_t synth_seed = 0;
    std::string synth_out, synth_clean;
    synth->add_option("--n", synth_n, "number of pairs")->default_val(64);
    synth->add_option("--size", synth_size, "square image size")->default_val(128);
    synth->add_option("--seed", synth_seed, "generator seed")->default_val(0);
    synth->add_option("--out", synth_out, "output dataset directory")->required();
    synth->add_option("--clean", synth_clean, "optional folder of clean PNGs to vignette");

    // train ------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
    std::string train_config, train_resume;
    std::vector<std::string> overrides;
    train_cmd->add_option("--config", train_config, "path to TrainConfig JSON")->required();
    train_cmd->add_option("--override", overrides, "dotted key=value config override (repeatable)");
    train_cmd->add_option("--resume", train_resume, "checkpoint directory to resume from");

    // eval -------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a paired dataset");
    std::string eval_ckpt, eval_data, eval_res = "512", eval_report, eval_csv;
    bool baseline_only = false;
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint directory");
    eval_cmd->add_option("--data", eval_data, "paired dataset directory")->required();
    eval_cmd->add_option("--res", eval_res, "comma-separated square resolutions")->default_val("512");
    eval_cmd->add_option("--report", eval_report, "write the JSON report here");
    eval_cmd->add_option("--csv", eval_csv, "write per-image CSVs with this path prefix");
    eval_cmd->add_flag("--baseline-only", baseline_only, "report only the input-vs-target row");

    // infer ------------------------------------------------------------
    auto* infer_cmd = app.add_subcommand("infer", "devignet a single PNG");
    std::string in_ckpt, in_path, out_path;
    bool grid = false;
    infer_cmd->add_option("--ckpt", in_ckpt, "checkpoint directory")->required();
    infer_cmd->add_option("--in", in_path, "input PNG")->required();
    infer_cmd->add_option("--out", out_path, "output PNG")->required();
    infer_cmd->add_flag("--grid", grid, "write an input|output side-by-side grid");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (synth->parsed()) {
        std::optional<std::string> clean;
        if (!synth_clean.empty()) clean = synth_clean;
        data::make_synthetic_dataset(synth_n, synth_size, synth_seed, synth_out, clean);
        std::cout << "wrote " << synth_n << " pairs (" << synth_size << "x" << synth_size << ") to "
                  << synth_out << "\n";
        return 0;
    }

    if (train_cmd->parsed()) {
        std::ifstream is(train_config);
        if (!is) throw UsageError("cannot open config file: " + train_config);
        nlohmann::json j;
        try {
            is >> j;
        } catch (const nlohmann::json::exception& e) {
            throw UsageError(std::string("bad config JSON: ") + e.what());
        }
        for (const auto& o : overrides) apply_override(j, o);
        TrainConfig cfg = j.get<TrainConfig>();
        if (const char* env_seed = std::getenv("DEVIGNET_SEED")) {
            cfg.seed = std::strtoull(env_seed, nullptr, 10);
            cfg.model.seed = cfg.seed;
        }
        if (cfg.dataset_path.empty()) throw UsageError("config is missing dataset_path");
        TrainResult res = train(cfg, train_resume);
        std::cout << "trained " << res.steps_done << " steps; final checkpoint at "
                  << res.final_checkpoint << "\n";
        return 0;
    }

    if (eval_cmd->parsed()) {
        std::unique_ptr<DeVigNet<float>> model;
        if (!baseline_only) {
            if (eval_ckpt.empty()) throw UsageError("eval requires --ckpt (or use --baseline-only)");
            model = std::move(load_checkpoint(eval_ckpt).model);
        }
        auto results = evaluate(model.get(), eval_data, parse_resolutions(eval_res), &std::cout);
        if (!eval_report.empty()) {
            std::ofstream os(eval_report);
            if (!os) throw DataError("cannot write report: " + eval_report);
            os << eval_results_to_json(results).dump(2) << "\n";
        }
        if (!eval_csv.empty()) {
            for (const auto& r : results) {
                std::ofstream os(eval_csv + "_res" + std::to_string(r.resolution) + ".csv");
                if (!os) throw DataError("cannot write CSV at prefix: " + eval_csv);
                os << to_csv(r.model);
            }
        }
        return 0;
    }

    if (infer_cmd->parsed()) {
        LoadedCheckpoint ck = load_checkpoint(in_ckpt);
        infer(*ck.model, in_path, out_path, grid);
        std::cout << "wrote " << out_path << "\n";
        return 0;
    }

    throw UsageError("no subcommand");
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const devignet::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const devignet::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const devignet::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
