#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sctopic/io_util.hpp"
#include "sctopic/model.hpp"

namespace sctopic {

// Checkpoint layout: <dir>/manifest.json plus one raw little-endian float64
// file per parameter tensor, row-major, named by role.
inline void save_checkpoint(const std::filesystem::path& dir, const ModelParams& params,
                            const TrainConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    nlohmann::json manifest;
    manifest["format"] = "sctopic-checkpoint";
    manifest["version"] = 1;
    manifest["dims"] = {{"n_genes", params.dims.n_genes},
                        {"ext_dim", params.dims.ext_dim},
                        {"n_topics", params.dims.n_topics},
                        {"embed_dim", params.dims.embed_dim},
                        {"hidden", params.dims.hidden}};
    manifest["config"] = {{"n_topics", cfg.n_topics},   {"embed_dim", cfg.embed_dim},
                          {"epochs", cfg.epochs},       {"batch_size", cfg.batch_size},
                          {"lr", cfg.lr},               {"alpha", cfg.alpha},
                          {"lambda", cfg.lambda},       {"tau", cfg.tau},
                          {"epsilon", cfg.epsilon},     {"sinkhorn_tol", cfg.sinkhorn_tol},
                          {"sinkhorn_max_iter", cfg.sinkhorn_max_iter},
                          {"knn_k", cfg.knn_k},         {"temperature", cfg.temperature},
                          {"use_cve", cfg.use_cve},
                          {"mean_assignment_entropy", cfg.mean_assignment_entropy},
                          {"top_h", cfg.top_h}};
    manifest["seed"] = cfg.seed;

    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& [name, var] : params.named()) {
        const Matrix& m = var.value();
        const std::string file = name + ".f64";
        std::string bytes(static_cast<std::size_t>(m.size()) * sizeof(double), '\0');
        std::memcpy(bytes.data(), m.data(), bytes.size());
        detail::atomic_write(dir / file, bytes);
        tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"file", file}});
    }
    manifest["tensors"] = tensors;
    detail::atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline ModelParams load_checkpoint(const std::filesystem::path& dir) {
    const auto manifest = nlohmann::json::parse(detail::read_file(dir / "manifest.json"));
    if (manifest.value("format", "") != "sctopic-checkpoint")
        throw DataError(dir.string() + ": not a checkpoint manifest");

    Dims dims;
    dims.n_genes = manifest["dims"]["n_genes"].get<Index>();
    dims.ext_dim = manifest["dims"]["ext_dim"].get<Index>();
    dims.n_topics = manifest["dims"]["n_topics"].get<Index>();
    dims.embed_dim = manifest["dims"]["embed_dim"].get<Index>();
    dims.hidden = manifest["dims"]["hidden"].get<Index>();

    auto load_tensor = [&](const std::string& name) {
        for (const auto& t : manifest["tensors"]) {
            if (t["name"] != name) continue;
            const Index rows = t["rows"].get<Index>();
            const Index cols = t["cols"].get<Index>();
            const std::string bytes = detail::read_file(dir / t["file"].get<std::string>());
            if (bytes.size() != static_cast<std::size_t>(rows * cols) * sizeof(double))
                throw DataError(dir.string() + ": tensor " + name + " has wrong size");
            Matrix m(rows, cols);
            std::memcpy(m.data(), bytes.data(), bytes.size());
            return ad::Var::parameter(std::move(m));
        }
        throw DataError(dir.string() + ": tensor " + name + " missing from manifest");
    };

    ModelParams p;
    p.dims = dims;
    p.enc_w1 = load_tensor("enc_w1");
    p.enc_b1 = load_tensor("enc_b1");
    p.enc_w2 = load_tensor("enc_w2");
    p.enc_b2 = load_tensor("enc_b2");
    p.mu_w = load_tensor("mu_w");
    p.mu_b = load_tensor("mu_b");
    p.logvar_w = load_tensor("logvar_w");
    p.logvar_b = load_tensor("logvar_b");
    p.clu_w1 = load_tensor("clu_w1");
    p.clu_b1 = load_tensor("clu_b1");
    p.clu_w2 = load_tensor("clu_w2");
    p.clu_b2 = load_tensor("clu_b2");
    p.topic_embed = load_tensor("topic_embed");
    p.gene_embed = load_tensor("gene_embed");
    return p;
}

} // namespace sctopic
