#include "fairsinkhorn/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fairsinkhorn/error.hpp"
#include "fairsinkhorn/hashing.hpp"
#include "fairsinkhorn/synthetic.hpp"

namespace fairsinkhorn {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string timestamp_utc() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buffer[32];
    std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buffer;
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open output file for writing: " + path.string());
    return out;
}

Eigen::MatrixXd normalize_rows_checked(Eigen::MatrixXd m, const char* what) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double norm = m.row(i).norm();
        if (norm < 1e-12) {
            throw NumericError(std::string("zero-norm ") + what + " at row " + std::to_string(i));
        }
        m.row(i) /= norm;
    }
    return m;
}

// ---------------------------------------------------------------- generate

Dataset slice_dataset(const Dataset& source, std::size_t begin, std::size_t end) {
    Dataset out;
    out.schema = source.schema;
    out.image_dim = source.image_dim;
    out.text_dim = source.text_dim;
    out.samples.assign(source.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                       source.samples.begin() + static_cast<std::ptrdiff_t>(end));
    return out;
}

} // namespace

GenerateResult run_generate(const ParsedConfig& cfg, const CliOverrides& overrides) {
    GeneratorConfig gen = parse_generator_config(cfg);
    if (overrides.seed) gen.seed = *overrides.seed;
    const std::vector<double> split = parse_split_fractions(cfg);

    std::filesystem::path out_dir = cfg.get_path("data", "out_dir", "data");
    if (overrides.out_dir) out_dir = *overrides.out_dir;
    ensure_dir(out_dir);

    const Dataset full = generate(gen);
    const std::size_t n = full.size();
    const auto train_count = static_cast<std::size_t>(std::floor(split[0] * static_cast<double>(n)));
    const auto val_count = static_cast<std::size_t>(std::floor(split[1] * static_cast<double>(n)));
    const std::size_t test_count = n - train_count - val_count;

    GenerateResult result;
    result.schema_path = out_dir / "schema.json";
    result.train_path = out_dir / "train.jsonl";
    result.val_path = out_dir / "val.jsonl";
    result.test_path = out_dir / "test.jsonl";
    result.manifest_path = out_dir / "manifest.json";
    result.train_count = train_count;
    result.val_count = val_count;
    result.test_count = test_count;

    SchemaFile schema_file;
    schema_file.schema = gen.schema;
    schema_file.image_dim = gen.image_dim;
    schema_file.text_dim = gen.text_dim;
    write_schema(schema_file, result.schema_path, cfg.hash);
    write_dataset(slice_dataset(full, 0, train_count), result.train_path, cfg.hash);
    write_dataset(slice_dataset(full, train_count, train_count + val_count), result.val_path,
                  cfg.hash);
    write_dataset(slice_dataset(full, train_count + val_count, n), result.test_path, cfg.hash);

    ordered_json manifest;
    manifest["format_version"] = kDatasetFormatVersion;
    manifest["config_hash"] = hex_hash(cfg.hash);
    manifest["seed"] = gen.seed;
    manifest["n_samples"] = n;
    manifest["counts"] = {{"train", train_count}, {"val", val_count}, {"test", test_count}};
    manifest["files"] = {{"schema", "schema.json"},
                         {"train", "train.jsonl"},
                         {"val", "val.jsonl"},
                         {"test", "test.jsonl"}};
    open_out(result.manifest_path) << manifest.dump(2) << '\n';
    return result;
}

// ------------------------------------------------------------------- train

namespace {

struct DualEncoders {
    EncoderParams image;
    EncoderParams text;

    std::vector<Eigen::MatrixXd> collect() const {
        std::vector<Eigen::MatrixXd> all = image.params;
        all.insert(all.end(), text.params.begin(), text.params.end());
        return all;
    }
    void restore(const std::vector<Eigen::MatrixXd>& all) {
        const std::size_t split = image.params.size();
        std::copy(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(split),
                  image.params.begin());
        std::copy(all.begin() + static_cast<std::ptrdiff_t>(split), all.end(),
                  text.params.begin());
    }
};

EmbeddingBatch encode_batch(const DualEncoders& enc, const Dataset& ds,
                            const std::vector<std::size_t>& indices) {
    EmbeddingBatch batch;
    batch.image_embeddings = forward(enc.image, gather_image_features(ds, indices));
    batch.text_embeddings = forward(enc.text, gather_text_features(ds, indices));
    batch.already_normalized = false;
    return batch;
}

// Mean contrastive loss over consecutive non-overlapping full batches; a
// trailing remainder shorter than the batch is dropped (whole split used
// when smaller than one batch).
double mean_clip_loss(const DualEncoders& enc, const Dataset& ds, std::size_t batch_size,
                      double temperature) {
    if (ds.size() == 0) throw DataError("cannot evaluate contrastive loss on an empty split");
    const std::size_t step = std::min(batch_size, ds.size());
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin + step <= ds.size(); begin += step) {
        std::vector<std::size_t> indices(step);
        std::iota(indices.begin(), indices.end(), begin);
        total += clip_loss(similarity(encode_batch(enc, ds, indices), temperature)).loss;
        batches += 1;
    }
    return total / static_cast<double>(batches);
}

class JsonlLogger {
  public:
    JsonlLogger(const std::filesystem::path& path, bool with_timestamps)
        : out_(open_out(path)), with_timestamps_(with_timestamps) {}

    void write(ordered_json record) {
        if (with_timestamps_) record["time"] = timestamp_utc();
        out_ << record.dump() << '\n';
    }
    void flush() { out_.flush(); }

  private:
    std::ofstream out_;
    bool with_timestamps_;
};

} // namespace

TrainResult run_train(const ParsedConfig& cfg, const CliOverrides& overrides) {
    RunConfig run = parse_run_config(cfg);
    if (overrides.seed) {
        run.seed = *overrides.seed;
        run.batch.seed = *overrides.seed;
    }
    if (overrides.out_dir) run.out_dir = *overrides.out_dir;
    run.validate();
    if (run.schema_path.empty() || run.train_path.empty()) {
        throw ConfigError("training needs [data] schema and train paths (or [data] dir)");
    }

    const SchemaFile schema = load_schema(run.schema_path);
    const Dataset train = load_dataset(run.train_path, schema);
    if (train.size() == 0) throw DataError("training split is empty");

    const bool fairness_on = run.fair.lambda_fair > 0.0;
    GroupPartition partition;
    if (fairness_on) partition = partition_by_attribute(train, run.attribute_name);

    bool do_eval = run.eval_every > 0 && !run.val_path.empty();
    Dataset val;
    if (do_eval) {
        val = load_dataset(run.val_path, schema);
        // A present-but-empty validation split silently disables eval; the
        // alternative (failing the whole run) would make 0-fraction splits
        // unusable.
        if (val.size() == 0) do_eval = false;
    }

    ensure_dir(run.out_dir);
    TrainResult result;
    result.config = run;
    result.checkpoint_path = run.out_dir / "checkpoint.bin";
    result.log_path = run.out_dir / "train_log.jsonl";
    result.manifest_path = run.out_dir / "run_manifest.ini";

    JsonlLogger log(result.log_path, !overrides.no_timestamps);
    {
        ordered_json header;
        header["event"] = "header";
        header["format_version"] = kDatasetFormatVersion;
        header["config_hash"] = hex_hash(cfg.hash);
        header["mode"] = run.mode;
        header["seed"] = run.seed;
        log.write(std::move(header));
    }

    // Stream 0: parameter init. Stream 1: main-batch sampling. Stream 2:
    // group-batch sampling (untouched when the fairness term is off, which
    // is what keeps lambda=0 runs bit-identical to plain contrastive ones).
    Rng init_rng = Rng::stream(run.seed, 0);
    DualEncoders enc;
    enc.image = EncoderParams::init(run.encoder_kind, static_cast<int>(schema.image_dim),
                                    run.hidden_dim, run.embed_dim, init_rng);
    enc.text = EncoderParams::init(run.encoder_kind, static_cast<int>(schema.text_dim),
                                   run.hidden_dim, run.embed_dim, init_rng);
    Rng batch_rng = Rng::stream(run.seed, 1);
    Rng group_rng = Rng::stream(run.seed, 2);

    std::vector<Eigen::MatrixXd> params = enc.collect();
    OptimizerState optimizer = OptimizerState::init(run.adam, params);

    // Levels that can actually supply a group batch; empty ones are warned
    // about once and skipped thereafter.
    std::vector<int> active_levels;
    if (fairness_on) {
        for (std::size_t level = 0; level < partition.groups.size(); ++level) {
            if (partition.groups[level].empty()) {
                ordered_json warning;
                warning["event"] = "warning";
                warning["message"] = "group '" +
                                     train.schema.attributes[static_cast<std::size_t>(
                                                                 partition.attribute)]
                                         .levels[level] +
                                     "' is empty; its fairness term is skipped";
                log.write(std::move(warning));
            } else {
                active_levels.push_back(static_cast<int>(level));
            }
        }
    }

    const std::size_t steps_per_epoch = std::max<std::size_t>(1, train.size() / run.batch.batch_size);
    const int attribute_index =
        fairness_on ? partition.attribute : -1;

    int global_step = 0;
    for (int epoch = 0; epoch < run.epochs; ++epoch) {
        for (std::size_t s = 0; s < steps_per_epoch; ++s, ++global_step) {
            const std::vector<std::size_t> indices = sample_batch(train, run.batch, batch_rng);
            const Eigen::MatrixXd x_img = gather_image_features(train, indices);
            const Eigen::MatrixXd x_txt = gather_text_features(train, indices);
            EmbeddingBatch batch;
            batch.image_embeddings = forward(enc.image, x_img);
            batch.text_embeddings = forward(enc.text, x_txt);

            std::map<int, EmbeddingBatch> group_batches;
            std::map<int, std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> group_inputs;
            if (fairness_on) {
                for (int level : active_levels) {
                    const std::vector<std::size_t> gidx = sample_group_batch(
                        partition, level, run.batch.group_batch_size, group_rng);
                    Eigen::MatrixXd gx_img = gather_image_features(train, gidx);
                    Eigen::MatrixXd gx_txt = gather_text_features(train, gidx);
                    EmbeddingBatch gb;
                    gb.image_embeddings = forward(enc.image, gx_img);
                    gb.text_embeddings = forward(enc.text, gx_txt);
                    group_batches.emplace(level, std::move(gb));
                    group_inputs.emplace(level,
                                         std::make_pair(std::move(gx_img), std::move(gx_txt)));
                }
            }

            // Inputs were validated at load time, so anything thrown from
            // here to the optimizer step is a numeric breakdown (overflowed
            // activations, degenerate norms, diverged solver); halt with the
            // step number rather than corrupting the checkpoint.
            FairClipResult res;
            try {
                res = fairclip_loss(batch, group_batches, run.fair, run.temperature);
                if (!std::isfinite(res.loss)) throw NumericError("non-finite loss");

                BackwardResult img_bw = backward(enc.image, x_img, res.main.image);
                BackwardResult txt_bw = backward(enc.text, x_txt, res.main.text);
                for (const auto& [level, grads] : res.group) {
                    const auto& [gx_img, gx_txt] = group_inputs.at(level);
                    const BackwardResult gi = backward(enc.image, gx_img, grads.image);
                    const BackwardResult gt = backward(enc.text, gx_txt, grads.text);
                    for (std::size_t k = 0; k < img_bw.param_grads.size(); ++k) {
                        img_bw.param_grads[k] += gi.param_grads[k];
                    }
                    for (std::size_t k = 0; k < txt_bw.param_grads.size(); ++k) {
                        txt_bw.param_grads[k] += gt.param_grads[k];
                    }
                }

                std::vector<Eigen::MatrixXd> grads = std::move(img_bw.param_grads);
                grads.insert(grads.end(), txt_bw.param_grads.begin(), txt_bw.param_grads.end());
                optimizer_step(params, grads, optimizer);
            } catch (const Error& e) {
                throw NumericError("training halted at step " + std::to_string(global_step) +
                                   ": " + e.what());
            }
            enc.restore(params);

            TrainStepRecord record;
            record.step = global_step;
            record.epoch = epoch;
            record.clip_loss = res.clip_component;
            record.sinkhorn_terms = res.fairness_terms;
            record.total = res.loss;
            result.steps.push_back(record);

            ordered_json entry;
            entry["event"] = "step";
            entry["step"] = global_step;
            entry["epoch"] = epoch;
            entry["clip_loss"] = res.clip_component;
            ordered_json terms = ordered_json::object();
            for (const auto& [level, value] : res.fairness_terms) {
                const std::string& name =
                    train.schema.attributes[static_cast<std::size_t>(attribute_index)]
                        .levels[static_cast<std::size_t>(level)];
                terms[name] = value;
            }
            entry["sinkhorn_terms"] = std::move(terms);
            entry["total"] = res.loss;
            log.write(std::move(entry));
        }

        if (do_eval && (epoch + 1) % run.eval_every == 0) {
            ordered_json entry;
            entry["event"] = "eval";
            entry["epoch"] = epoch;
            entry["val_clip_loss"] =
                mean_clip_loss(enc, val, run.batch.batch_size, run.temperature);
            log.write(std::move(entry));
        }
        if (run.checkpoint_every > 0 && (epoch + 1) % run.checkpoint_every == 0) {
            Checkpoint ckpt;
            ckpt.image_encoder = enc.image;
            ckpt.text_encoder = enc.text;
            ckpt.optimizer = optimizer;
            ckpt.config_hash = cfg.hash;
            ckpt.rng_state = batch_rng.serialize();
            ckpt.epoch = epoch + 1;
            save_checkpoint(ckpt,
                            (run.out_dir / ("checkpoint_epoch_" + std::to_string(epoch + 1) + ".bin"))
                                .string());
        }
    }

    Checkpoint final_ckpt;
    final_ckpt.image_encoder = enc.image;
    final_ckpt.text_encoder = enc.text;
    final_ckpt.optimizer = optimizer;
    final_ckpt.config_hash = cfg.hash;
    final_ckpt.rng_state = batch_rng.serialize();
    final_ckpt.epoch = run.epochs;
    save_checkpoint(final_ckpt, result.checkpoint_path.string());

    {
        std::ofstream manifest = open_out(result.manifest_path);
        manifest << "# config_hash = " << hex_hash(cfg.hash) << "\n";
        manifest << render_run_config(run);
    }

    if (!result.steps.empty()) {
        const TrainStepRecord& last = result.steps.back();
        result.final_total = last.total;
        result.final_clip = last.clip_loss;
        for (const auto& [level, value] : last.sinkhorn_terms) result.final_fairness_sum += value;
    }
    log.flush();
    return result;
}

// ----------------------------------------------------------------- reports

namespace {

struct LoadedEval {
    SchemaFile schema;
    Dataset train;
    Dataset test;
    Checkpoint checkpoint;
    int attribute = -1;
    std::string attribute_name;
};

LoadedEval load_eval_inputs(const RunConfig& run, const ReportConfig& report, bool need_train) {
    if (report.checkpoint.empty()) {
        throw ConfigError("missing required config key [report] checkpoint");
    }
    if (run.attribute_name.empty()) {
        throw ConfigError("evaluation needs [fair] attribute");
    }
    if (run.schema_path.empty() || run.test_path.empty()) {
        throw ConfigError("evaluation needs [data] schema and test paths (or [data] dir)");
    }
    LoadedEval in;
    in.schema = load_schema(run.schema_path);
    in.attribute_name = run.attribute_name;
    in.attribute = in.schema.schema.attribute_index(run.attribute_name);
    if (in.attribute < 0) {
        throw DataError("attribute '" + run.attribute_name + "' not present in schema");
    }
    if (need_train) {
        if (run.train_path.empty()) throw ConfigError("probe needs [data] train path");
        in.train = load_dataset(run.train_path, in.schema);
    }
    in.test = load_dataset(run.test_path, in.schema);
    in.checkpoint = load_checkpoint(report.checkpoint.string());
    return in;
}

Predictions assemble_predictions(const LoadedEval& in, std::vector<double> scores,
                                 double threshold) {
    Predictions preds;
    preds.scores = std::move(scores);
    preds.threshold = threshold;
    preds.num_levels = static_cast<int>(
        in.schema.schema.attributes[static_cast<std::size_t>(in.attribute)].levels.size());
    preds.labels.reserve(in.test.size());
    preds.group_ids.reserve(in.test.size());
    for (const Sample& s : in.test.samples) {
        preds.labels.push_back(s.label);
        preds.group_ids.push_back(s.attribute_values[static_cast<std::size_t>(in.attribute)]);
    }
    return preds;
}

std::string percent(double fraction) {
    char buffer[32];
    std::snprintf(buffer, sizeof buffer, "%.2f", fraction * 100.0);
    return buffer;
}

EvalResult write_reports(const ReportConfig& report, const LoadedEval& in,
                         const EvaluationReport& evaluation, std::uint64_t config_hash) {
    ensure_dir(report.out_dir);
    EvalResult out;
    out.report = evaluation;
    out.report_json_path = report.out_dir / "report.json";
    out.report_csv_path = report.out_dir / "report.csv";

    const auto& levels =
        in.schema.schema.attributes[static_cast<std::size_t>(in.attribute)].levels;

    ordered_json doc;
    doc["format_version"] = kDatasetFormatVersion;
    doc["config_hash"] = hex_hash(config_hash);
    doc["model"] = report.model_name;
    doc["attribute"] = evaluation.attribute_name;
    doc["auc"] = evaluation.auc;
    doc["es_auc"] = evaluation.es_auc;
    doc["dpd"] = evaluation.dpd;
    doc["deodds"] = evaluation.deodds;
    ordered_json group_auc = ordered_json::object();
    for (const auto& [level, value] : evaluation.group_auc) {
        group_auc[levels[static_cast<std::size_t>(level)]] = value;
    }
    doc["group_auc"] = std::move(group_auc);
    ordered_json counts = ordered_json::object();
    for (const auto& [level, count] : evaluation.sample_counts) {
        counts[levels[static_cast<std::size_t>(level)]] = count;
    }
    doc["sample_counts"] = std::move(counts);
    doc["warnings"] = evaluation.warnings;
    open_out(out.report_json_path) << doc.dump(2) << '\n';

    // Flat row, percent units, fixed column order; groups without an AUC
    // render as empty cells.
    std::ofstream csv = open_out(out.report_csv_path);
    csv << "# format_version=" << kDatasetFormatVersion << " config_hash=" << hex_hash(config_hash)
        << "\n";
    csv << "attribute,model,dpd,deodds,auc,es_auc";
    for (const std::string& level : levels) csv << ",auc_" << level;
    csv << "\n";
    csv << evaluation.attribute_name << ',' << report.model_name << ',' << percent(evaluation.dpd)
        << ',' << percent(evaluation.deodds) << ',' << percent(evaluation.auc) << ','
        << percent(evaluation.es_auc);
    for (std::size_t level = 0; level < levels.size(); ++level) {
        const auto it = evaluation.group_auc.find(static_cast<int>(level));
        csv << ',';
        if (it != evaluation.group_auc.end()) csv << percent(it->second);
    }
    csv << "\n";
    return out;
}

} // namespace

EvalResult run_probe(const ParsedConfig& cfg, const CliOverrides& overrides) {
    RunConfig run = parse_run_config(cfg);
    ProbeConfig probe = parse_probe_config(cfg);
    ReportConfig report = parse_report_config(cfg);
    if (overrides.seed) probe.seed = *overrides.seed;
    if (overrides.out_dir) report.out_dir = *overrides.out_dir;

    const LoadedEval in = load_eval_inputs(run, report, /*need_train=*/true);

    std::vector<std::size_t> all_train(in.train.size());
    std::iota(all_train.begin(), all_train.end(), 0);
    const Eigen::MatrixXd z_train = normalize_rows_checked(
        forward(in.checkpoint.image_encoder, gather_image_features(in.train, all_train)),
        "train embedding");
    Eigen::VectorXd labels(z_train.rows());
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
        labels[i] = in.train.samples[static_cast<std::size_t>(i)].label;
    }

    // Full-batch logistic regression on the frozen embeddings; zero init
    // makes the 0-epoch probe score exactly chance level.
    Eigen::VectorXd w = Eigen::VectorXd::Zero(z_train.cols());
    double b = 0.0;
    const double k = static_cast<double>(z_train.rows());
    for (int epoch = 0; epoch < probe.epochs; ++epoch) {
        const Eigen::VectorXd logits = (z_train * w).array() + b;
        const Eigen::VectorXd p = 1.0 / (1.0 + (-logits.array()).exp());
        const Eigen::VectorXd residual = p - labels;
        const Eigen::VectorXd grad_w = z_train.transpose() * residual / k + probe.l2 * w;
        const double grad_b = residual.mean();
        w -= probe.learning_rate * grad_w;
        b -= probe.learning_rate * grad_b;
    }

    std::vector<std::size_t> all_test(in.test.size());
    std::iota(all_test.begin(), all_test.end(), 0);
    const Eigen::MatrixXd z_test = normalize_rows_checked(
        forward(in.checkpoint.image_encoder, gather_image_features(in.test, all_test)),
        "test embedding");
    std::vector<double> scores(in.test.size());
    for (Eigen::Index i = 0; i < z_test.rows(); ++i) {
        const double logit = z_test.row(i).dot(w) + b;
        scores[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(-logit));
    }

    const Predictions preds = assemble_predictions(in, std::move(scores), probe.threshold);
    const EvaluationReport evaluation = evaluate(preds, in.attribute_name);
    return write_reports(report, in, evaluation, cfg.hash);
}

EvalResult run_zeroshot(const ParsedConfig& cfg, const CliOverrides& overrides) {
    RunConfig run = parse_run_config(cfg);
    ReportConfig report = parse_report_config(cfg);
    if (overrides.out_dir) report.out_dir = *overrides.out_dir;
    if (report.prompts_path.empty()) {
        throw ConfigError("missing required config key [report] prompts");
    }

    const LoadedEval in = load_eval_inputs(run, report, /*need_train=*/false);

    std::ifstream prompt_file(report.prompts_path);
    if (!prompt_file) throw DataError("cannot open prompts file: " + report.prompts_path.string());
    ordered_json doc;
    try {
        prompt_file >> doc;
    } catch (const ordered_json::parse_error& e) {
        throw DataError("prompts file is not valid JSON: " + std::string(e.what()));
    }
    if (!doc.contains("prompts") || !doc["prompts"].is_array() || doc["prompts"].size() != 2) {
        throw DataError("prompts file must hold exactly 2 class vectors under 'prompts' "
                        "(negative class first, positive class second)");
    }
    const int embed_dim = in.checkpoint.text_encoder.output_dim;
    Eigen::MatrixXd prompts(2, embed_dim);
    for (int c = 0; c < 2; ++c) {
        const ordered_json& row = doc["prompts"][static_cast<std::size_t>(c)];
        if (static_cast<int>(row.size()) != embed_dim) {
            throw DataError("prompt vector " + std::to_string(c) + " has length " +
                            std::to_string(row.size()) + ", expected embedding dim " +
                            std::to_string(embed_dim));
        }
        for (int d = 0; d < embed_dim; ++d) prompts(c, d) = row[static_cast<std::size_t>(d)];
    }
    prompts = normalize_rows_checked(std::move(prompts), "prompt");

    std::vector<std::size_t> all_test(in.test.size());
    std::iota(all_test.begin(), all_test.end(), 0);
    const Eigen::MatrixXd z_test = normalize_rows_checked(
        forward(in.checkpoint.image_encoder, gather_image_features(in.test, all_test)),
        "test embedding");

    // Positive-class softmax probability over the two cosine logits; the
    // hard prediction (score >= 0.5) is exactly the argmax class.
    std::vector<double> scores(in.test.size());
    for (Eigen::Index i = 0; i < z_test.rows(); ++i) {
        const double s_neg = z_test.row(i).dot(prompts.row(0)) / run.temperature;
        const double s_pos = z_test.row(i).dot(prompts.row(1)) / run.temperature;
        const double mx = std::max(s_neg, s_pos);
        const double e_neg = std::exp(s_neg - mx);
        const double e_pos = std::exp(s_pos - mx);
        scores[static_cast<std::size_t>(i)] = e_pos / (e_neg + e_pos);
    }

    Predictions preds = assemble_predictions(in, std::move(scores), 0.5);
    EvaluationReport evaluation = evaluate(preds, in.attribute_name);
    const bool all_equal =
        std::adjacent_find(preds.scores.begin(), preds.scores.end(),
                           [](double a, double b) { return a != b; }) == preds.scores.end();
    if (all_equal) {
        evaluation.warnings.push_back(
            "degenerate prompts: every score identical; AUC reflects pure ties");
    }
    return write_reports(report, in, evaluation, cfg.hash);
}

CompareResult run_compare(const ParsedConfig& cfg, const CliOverrides& overrides) {
    ReportConfig report = parse_report_config(cfg);
    if (overrides.out_dir) report.out_dir = *overrides.out_dir;
    if (report.baseline_dir.empty() || report.treatment_dir.empty()) {
        throw ConfigError("compare needs [report] baseline_dir and treatment_dir");
    }

    const auto read_report = [](const std::filesystem::path& dir,
                                const std::string& expected_attribute) -> ordered_json {
        const std::filesystem::path path = dir / "report.json";
        std::ifstream in(path);
        if (!in) {
            std::string message = "no report.json under " + dir.string();
            if (!expected_attribute.empty()) {
                message += " (expected a report for attribute '" + expected_attribute + "')";
            }
            throw DataError(message);
        }
        try {
            ordered_json doc;
            in >> doc;
            return doc;
        } catch (const ordered_json::parse_error& e) {
            throw DataError(path.string() + " is not valid JSON: " + std::string(e.what()));
        }
    };

    const ordered_json baseline = read_report(report.baseline_dir, "");
    const std::string attribute = baseline.value("attribute", std::string{});
    const ordered_json treatment = read_report(report.treatment_dir, attribute);
    const std::string treatment_attribute = treatment.value("attribute", std::string{});
    if (attribute != treatment_attribute) {
        throw DataError("attribute mismatch between reports: baseline evaluates '" + attribute +
                        "', treatment evaluates '" + treatment_attribute + "'");
    }

    CompareResult result;
    result.attribute = attribute;

    const auto add_row = [&result](const std::string& metric, double a, double b,
                                   bool lower_is_better) {
        CompareRow row;
        row.metric = metric;
        row.baseline = a;
        row.treatment = b;
        row.delta = b - a;
        row.improved = lower_is_better ? b < a : b > a;
        result.rows.push_back(row);
    };

    add_row("dpd", baseline.at("dpd"), treatment.at("dpd"), true);
    add_row("deodds", baseline.at("deodds"), treatment.at("deodds"), true);
    add_row("auc", baseline.at("auc"), treatment.at("auc"), false);
    add_row("es_auc", baseline.at("es_auc"), treatment.at("es_auc"), false);
    result.es_auc_improved = result.rows.back().improved;

    // Group AUC rows over the union of level names, in baseline order then
    // any treatment-only extras.
    std::vector<std::string> group_names;
    for (const auto& [name, value] : baseline.at("group_auc").items()) group_names.push_back(name);
    for (const auto& [name, value] : treatment.at("group_auc").items()) {
        if (std::find(group_names.begin(), group_names.end(), name) == group_names.end()) {
            group_names.push_back(name);
        }
    }
    for (const std::string& name : group_names) {
        const bool in_a = baseline.at("group_auc").contains(name);
        const bool in_b = treatment.at("group_auc").contains(name);
        if (!in_a || !in_b) continue; // degenerate on one side; no delta to report
        add_row("auc_" + name, baseline.at("group_auc").at(name),
                treatment.at("group_auc").at(name), false);
    }

    ensure_dir(report.out_dir);
    result.csv_path = report.out_dir / "compare.csv";
    std::ofstream csv = open_out(result.csv_path);
    csv << "# format_version=" << kDatasetFormatVersion
        << " config_hash_baseline=" << baseline.value("config_hash", std::string{})
        << " config_hash_treatment=" << treatment.value("config_hash", std::string{}) << "\n";
    csv << "attribute,metric,baseline,treatment,delta,improved\n";
    for (const CompareRow& row : result.rows) {
        csv << attribute << ',' << row.metric << ',' << percent(row.baseline) << ','
            << percent(row.treatment) << ',' << percent(row.delta) << ','
            << (row.improved ? "yes" : "no") << "\n";
    }

    std::cout << "attribute: " << attribute << "\n";
    for (const CompareRow& row : result.rows) {
        std::printf("%-16s baseline %7s  treatment %7s  delta %7s  %s\n", row.metric.c_str(),
                    percent(row.baseline).c_str(), percent(row.treatment).c_str(),
                    percent(row.delta).c_str(), row.improved ? "improved" : "-");
    }
    return result;
}

} // namespace fairsinkhorn
