#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sctopic/checkpoint.hpp"
#include "sctopic/cluster.hpp"
#include "sctopic/data_io.hpp"
#include "sctopic/interpret.hpp"
#include "sctopic/io_util.hpp"
#include "sctopic/model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int env_threads() {
    const char* v = std::getenv("SCTOPIC_THREADS");
    if (!v) return 1;
    const int n = std::atoi(v);
    return n >= 1 ? n : 1;
}

void write_matrix_csv(const fs::path& path, const sctopic::Matrix& values,
                      const std::string& id_header, const std::vector<std::string>& row_ids,
                      const std::vector<std::string>& col_names) {
    std::string buf = id_header;
    for (const auto& c : col_names) { buf += ','; buf += c; }
    buf += '\n';
    for (sctopic::Index i = 0; i < values.rows(); ++i) {
        buf += row_ids[static_cast<std::size_t>(i)];
        for (sctopic::Index j = 0; j < values.cols(); ++j) {
            buf += ',';
            buf += sctopic::detail::format_double(values(i, j));
        }
        buf += '\n';
    }
    sctopic::detail::atomic_write(path, buf);
}

std::vector<std::string> topic_names(sctopic::Index k) {
    std::vector<std::string> names;
    for (sctopic::Index i = 0; i < k; ++i) names.push_back("topic_" + std::to_string(i));
    return names;
}

struct SynthArgs {
    std::string out;
    sctopic::SynthConfig cfg;
};

int run_synth(const SynthArgs& args) {
    args.cfg.validate();
    const auto data = sctopic::generate_synthetic(args.cfg);
    const fs::path dir(args.out);
    fs::create_directories(dir);

    sctopic::write_expression_csv(dir / "expression.csv", data.dataset.expression,
                                  data.dataset.gene_names, data.dataset.cell_ids);
    sctopic::write_embedding_csv(dir / "embeddings.csv", *data.dataset.external);
    std::vector<std::string> label_strings;
    for (int l : data.labels)
        label_strings.push_back(data.dataset.label_names[static_cast<std::size_t>(l)]);
    sctopic::write_labels_csv(dir / "labels.csv", data.dataset.cell_ids, label_strings);

    json truth;
    truth["config"] = {{"n_cells", args.cfg.n_cells},       {"n_genes", args.cfg.n_genes},
                       {"n_topics", args.cfg.n_topics},     {"zipf_exponent", args.cfg.zipf_exponent},
                       {"noise_level", args.cfg.noise_level}, {"view_dim", args.cfg.view_dim},
                       {"seed", args.cfg.seed}};
    truth["labels"] = data.labels;
    truth["label_names"] = data.dataset.label_names;
    truth["signature_genes"] = data.signature_genes;
    sctopic::detail::atomic_write(dir / "truth.json", truth.dump(2) + "\n");

    std::cout << "wrote " << (dir / "expression.csv").string() << ", embeddings.csv, labels.csv, truth.json\n";
    return 0;
}

struct TrainArgs {
    std::string expression, embeddings, out;
    std::string format = "auto";
    sctopic::Index n_hvg = 5000;
    sctopic::TrainConfig cfg;
    bool no_cve = false;
};

int run_train(const TrainArgs& args) {
    sctopic::ExpressionFormat fmt;
    if (args.format == "csv") fmt = sctopic::ExpressionFormat::csv;
    else if (args.format == "mtx") fmt = sctopic::ExpressionFormat::mtx;
    else fmt = fs::path(args.expression).extension() == ".mtx" ? sctopic::ExpressionFormat::mtx
                                                               : sctopic::ExpressionFormat::csv;

    const auto expr = sctopic::load_expression(args.expression, fmt);
    const sctopic::Index keep = std::min<sctopic::Index>(args.n_hvg, expr.values.cols());
    auto prep = sctopic::preprocess(expr.values, expr.gene_names, keep);

    sctopic::Dataset data;
    data.expression = std::move(prep.matrix);
    data.gene_names = std::move(prep.gene_names);
    data.cell_ids = expr.cell_ids;

    sctopic::TrainConfig cfg = args.cfg;
    cfg.use_cve = !args.no_cve;
    if (cfg.use_cve) {
        if (args.embeddings.empty())
            throw sctopic::DataError("train: --embeddings is required unless --no-cve is set");
        sctopic::Matrix ext = sctopic::load_embedding_csv(args.embeddings);
        if (ext.rows() != data.expression.rows())
            throw sctopic::DataError("train: embeddings row count (" + std::to_string(ext.rows()) +
                                     ") != cell count (" + std::to_string(data.expression.rows()) + ")");
        data.external = std::move(ext);
    }

    std::cerr << "training: n=" << data.expression.rows() << " genes=" << data.expression.cols()
              << " topics=" << cfg.n_topics << " epochs=" << cfg.epochs << "\n";
    const auto result = sctopic::train(data, cfg);

    const fs::path dir(args.out);
    fs::create_directories(dir);
    sctopic::save_checkpoint(dir / "checkpoint", result.params, cfg);

    std::string log_csv = "epoch,L_RE,L_CON,L_NEI,L_REG,L_ECR,total,sinkhorn_iters,sinkhorn_violation\n";
    for (const auto& e : result.log) {
        log_csv += std::to_string(e.epoch);
        for (double v : {e.re, e.con, e.nei, e.reg, e.ecr, e.total, e.sinkhorn_iters, e.sinkhorn_violation}) {
            log_csv += ',';
            log_csv += sctopic::detail::format_double(v);
        }
        log_csv += '\n';
    }
    sctopic::detail::atomic_write(dir / "loss_log.csv", log_csv);

    const auto topics = topic_names(cfg.n_topics);
    write_matrix_csv(dir / "theta.csv", result.outputs.theta, "cell_id", data.cell_ids, topics);
    write_matrix_csv(dir / "gene_topic.csv", result.outputs.gene_topic, "gene", data.gene_names, topics);

    json top;
    top["h"] = std::min(cfg.top_h, data.expression.cols());
    top["topics"] = result.outputs.top_genes;
    sctopic::detail::atomic_write(dir / "top_genes.json", top.dump(2) + "\n");

    std::cout << "final loss " << result.log.back().total << "; outputs in " << dir.string() << "\n";
    return 0;
}

struct EvalArgs {
    std::string run, theta, gene_topic, top_genes, labels, gmt, out;
    sctopic::MetricConfig cfg;
    sctopic::Index kmeans_k = 0; // 0: number of label classes
};

int run_eval(EvalArgs args) {
    if (!args.run.empty()) {
        const fs::path run(args.run);
        if (args.theta.empty()) args.theta = (run / "theta.csv").string();
        if (args.gene_topic.empty()) args.gene_topic = (run / "gene_topic.csv").string();
        if (args.top_genes.empty()) args.top_genes = (run / "top_genes.json").string();
    }
    if (args.theta.empty() || args.gene_topic.empty() || args.top_genes.empty())
        throw sctopic::DataError("eval: provide --run or all of --theta/--gene-topic/--top-genes");

    const auto theta_file = sctopic::load_expression_csv(args.theta);
    const auto gene_topic_file = sctopic::load_expression_csv(args.gene_topic);

    sctopic::TopicSummary topics;
    topics.theta = theta_file.values;
    topics.gene_topic = gene_topic_file.values;
    topics.gene_names = gene_topic_file.cell_ids; // first column of gene_topic.csv
    const auto top_json = json::parse(sctopic::detail::read_file(args.top_genes));
    topics.top_genes = top_json.at("topics").get<std::vector<std::vector<std::string>>>();

    const auto labels = sctopic::load_labels_csv(args.labels);
    if (labels.cell_ids != theta_file.cell_ids)
        throw sctopic::DataError("eval: labels file cell ids do not match theta.csv");

    auto db = sctopic::parse_gmt(args.gmt);
    std::unordered_set<std::string> vocab(topics.gene_names.begin(), topics.gene_names.end());
    sctopic::PathwayDB used;
    std::size_t dropped = 0;
    for (auto& p : db.pathways) {
        sctopic::Pathway trimmed;
        trimmed.name = p.name;
        for (auto& g : p.genes)
            if (vocab.count(g)) trimmed.genes.push_back(g);
        if (trimmed.genes.empty()) ++dropped;
        else used.pathways.push_back(std::move(trimmed));
    }
    if (used.pathways.empty())
        throw sctopic::DataError("eval: no pathway shares any gene with the model vocabulary");
    if (dropped > 0)
        std::cerr << "warning: dropped " << dropped << " pathways with no gene in the vocabulary\n";

    args.cfg.n_threads = env_threads();
    const auto report = sctopic::full_report(topics, labels.labels, used, args.cfg);

    const auto argmax_ids = sctopic::cluster_theta(topics.theta, sctopic::ClusterMode::argmax, 0, 0);
    const sctopic::Index classes = static_cast<sctopic::Index>(labels.label_names.size());
    const sctopic::Index k = args.kmeans_k > 0 ? args.kmeans_k : classes;
    const auto kmeans_ids =
        sctopic::cluster_theta(topics.theta, sctopic::ClusterMode::kmeans, k, args.cfg.seed);

    json out;
    out["schema"] = "sctopic-report-v1";
    out["ari"] = sctopic::ari(argmax_ids, labels.labels);
    out["nmi"] = sctopic::nmi(argmax_ids, labels.labels);
    out["clustering"] = {
        {"argmax", {{"ari", out["ari"]}, {"nmi", out["nmi"]}}},
        {"kmeans",
         {{"ari", sctopic::ari(kmeans_ids, labels.labels)},
          {"nmi", sctopic::nmi(kmeans_ids, labels.labels)},
          {"k", k}}}};
    out["metrics"] = {{"tc", report.tc},         {"td", report.td},     {"tq", report.tq},
                      {"ip", report.ip},         {"ora_n", report.ora_n}, {"ora_u", report.ora_u},
                      {"ora_q", report.ora_q},   {"gsea_n", report.gsea_n},
                      {"gsea_u", report.gsea_u}, {"gsea_q", report.gsea_q}};
    out["config"] = {{"n_perm", args.cfg.n_perm},
                     {"ora_q_threshold", args.cfg.ora_q_threshold},
                     {"gsea_q_threshold", args.cfg.gsea_q_threshold},
                     {"gsea_weight_exponent", args.cfg.gsea_weight_exponent},
                     {"seed", args.cfg.seed},
                     {"kmeans_k", k}};
    out["data"] = {{"n_cells", topics.theta.rows()},
                   {"n_topics", topics.theta.cols()},
                   {"n_genes", static_cast<sctopic::Index>(topics.gene_names.size())},
                   {"n_classes", classes},
                   {"n_pathways_tested", static_cast<sctopic::Index>(used.pathways.size())},
                   {"n_pathways_dropped", static_cast<sctopic::Index>(dropped)}};

    const fs::path dir(args.out);
    fs::create_directories(dir);
    sctopic::detail::atomic_write(dir / "report.json", out.dump(2) + "\n");

    auto write_enrichment = [&](const fs::path& path, const sctopic::EnrichmentResult& res,
                                const char* stat_name) {
        std::string csv = std::string("topic,pathway,p,q,") + stat_name + "\n";
        for (const auto& r : res.rows) {
            csv += std::to_string(r.topic) + "," + r.pathway + "," +
                   sctopic::detail::format_double(r.p) + "," + sctopic::detail::format_double(r.q) +
                   "," + sctopic::detail::format_double(r.stat) + "\n";
        }
        sctopic::detail::atomic_write(path, csv);
    };
    write_enrichment(dir / "ora_enrichment.csv", report.ora_detail, "overlap");
    write_enrichment(dir / "gsea_enrichment.csv", report.gsea_detail, "es");

    std::cout << "report written to " << (dir / "report.json").string() << "\n";
    return 0;
}

int run_report(const std::string& path) {
    const auto report = json::parse(sctopic::detail::read_file(path));
    const auto& m = report.at("metrics");
    std::printf("interpretability\n");
    std::printf("  %-8s %10.4f\n", "TC", m.at("tc").get<double>());
    std::printf("  %-8s %10.4f\n", "TD", m.at("td").get<double>());
    std::printf("  %-8s %10.4f\n", "TQ", m.at("tq").get<double>());
    std::printf("  %-8s %10.4f\n", "IP", m.at("ip").get<double>());
    std::printf("  %-8s %10.4f\n", "ORA_N", m.at("ora_n").get<double>());
    std::printf("  %-8s %10.4f\n", "ORA_U", m.at("ora_u").get<double>());
    std::printf("  %-8s %10.4f\n", "ORA_Q", m.at("ora_q").get<double>());
    std::printf("  %-8s %10.4f\n", "GSEA_N", m.at("gsea_n").get<double>());
    std::printf("  %-8s %10.4f\n", "GSEA_U", m.at("gsea_u").get<double>());
    std::printf("  %-8s %10.4f\n", "GSEA_Q", m.at("gsea_q").get<double>());
    std::printf("clustering\n");
    std::printf("  %-8s %10.4f\n", "ARI", report.at("ari").get<double>());
    std::printf("  %-8s %10.4f\n", "NMI", report.at("nmi").get<double>());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"single-cell embedded topic modeling toolkit"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate a planted-topic synthetic dataset");
    synth_cmd->add_option("--out", synth.out, "output directory")->required();
    synth_cmd->add_option("--cells", synth.cfg.n_cells, "number of cells");
    synth_cmd->add_option("--genes", synth.cfg.n_genes, "number of genes");
    synth_cmd->add_option("--topics", synth.cfg.n_topics, "number of planted topics");
    synth_cmd->add_option("--zipf", synth.cfg.zipf_exponent, "gene popularity exponent");
    synth_cmd->add_option("--noise", synth.cfg.noise_level, "external view noise std");
    synth_cmd->add_option("--view-dim", synth.cfg.view_dim, "external view dimension");
    synth_cmd->add_option("--seed", synth.cfg.seed, "random seed");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "fit the topic model");
    train_cmd->add_option("--expression", train.expression, "expression matrix (csv or mtx)")->required();
    train_cmd->add_option("--embeddings", train.embeddings, "external cell embeddings csv");
    train_cmd->add_option("--out", train.out, "output directory")->required();
    train_cmd->add_option("--format", train.format, "expression format: csv|mtx|auto");
    train_cmd->add_option("--n-hvg", train.n_hvg, "highly variable genes to keep");
    train_cmd->add_option("--topics", train.cfg.n_topics, "number of topics");
    train_cmd->add_option("--embed-dim", train.cfg.embed_dim, "topic/gene embedding dimension");
    train_cmd->add_option("--epochs", train.cfg.epochs, "training epochs");
    train_cmd->add_option("--batch-size", train.cfg.batch_size, "mini-batch size (0 = auto)");
    train_cmd->add_option("--lr", train.cfg.lr, "RMSprop learning rate");
    train_cmd->add_option("--alpha", train.cfg.alpha, "entropy regularizer weight");
    train_cmd->add_option("--lambda", train.cfg.lambda, "OT clustering regularizer weight");
    train_cmd->add_option("--tau", train.cfg.tau, "decoder temperature");
    train_cmd->add_option("--epsilon", train.cfg.epsilon, "Sinkhorn entropic regularization");
    train_cmd->add_option("--sinkhorn-tol", train.cfg.sinkhorn_tol, "Sinkhorn marginal tolerance");
    train_cmd->add_option("--sinkhorn-max-iter", train.cfg.sinkhorn_max_iter, "Sinkhorn iteration cap");
    train_cmd->add_option("--knn-k", train.cfg.knn_k, "mutual kNN neighborhood size");
    train_cmd->add_option("--temperature", train.cfg.temperature, "contrastive temperature");
    train_cmd->add_option("--top-h", train.cfg.top_h, "top genes per topic");
    train_cmd->add_option("--seed", train.cfg.seed, "random seed");
    train_cmd->add_flag("--no-cve", train.no_cve, "train without the external view");
    train_cmd->add_flag("--mean-entropy", train.cfg.mean_assignment_entropy,
                        "regularize entropy of the batch-mean assignment instead");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "score a trained run");
    eval_cmd->add_option("--run", eval.run, "training output directory");
    eval_cmd->add_option("--theta", eval.theta, "cell-topic csv (overrides --run)");
    eval_cmd->add_option("--gene-topic", eval.gene_topic, "gene-topic csv (overrides --run)");
    eval_cmd->add_option("--top-genes", eval.top_genes, "top genes json (overrides --run)");
    eval_cmd->add_option("--labels", eval.labels, "cell labels csv")->required();
    eval_cmd->add_option("--gmt", eval.gmt, "pathway database (GMT)")->required();
    eval_cmd->add_option("--out", eval.out, "output directory")->required();
    eval_cmd->add_option("--n-perm", eval.cfg.n_perm, "GSEA permutations");
    eval_cmd->add_option("--ora-q", eval.cfg.ora_q_threshold, "ORA significance threshold");
    eval_cmd->add_option("--gsea-q", eval.cfg.gsea_q_threshold, "GSEA significance threshold");
    eval_cmd->add_option("--gsea-weight", eval.cfg.gsea_weight_exponent,
                         "GSEA weighting exponent (0 or 1)");
    eval_cmd->add_option("--kmeans-k", eval.kmeans_k, "k-means cluster count (0 = #classes)");
    eval_cmd->add_option("--seed", eval.cfg.seed, "random seed");

    std::string report_path;
    auto* report_cmd = app.add_subcommand("report", "pretty-print a report json");
    report_cmd->add_option("--report", report_path, "report.json path")->required();

    try {
        app.parse(argc, argv);
        if (synth_cmd->parsed()) return run_synth(synth);
        if (train_cmd->parsed()) return run_train(train);
        if (eval_cmd->parsed()) return run_eval(eval);
        if (report_cmd->parsed()) return run_report(report_path);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const sctopic::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const sctopic::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
