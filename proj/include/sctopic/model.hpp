#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sctopic/autodiff.hpp"
#include "sctopic/data_io.hpp"
#include "sctopic/matrix.hpp"
#include "sctopic/neighbors.hpp"
#include "sctopic/rng.hpp"
#include "sctopic/sinkhorn.hpp"

namespace sctopic {

struct Dims {
    Index n_genes = 0;   // V
    Index ext_dim = 0;   // d
    Index n_topics = 0;  // K
    Index embed_dim = 0; // E
    Index hidden = 200;
};

// Encoder f: x -> (mu, logvar) through two Tanh hidden layers; cluster head
// g: v -> phi logits through one Tanh hidden layer; plus the topic and gene
// embeddings the decoder and the OT regularizer share.
struct ModelParams {
    Dims dims;
    ad::Var enc_w1, enc_b1, enc_w2, enc_b2;
    ad::Var mu_w, mu_b, logvar_w, logvar_b;
    ad::Var clu_w1, clu_b1, clu_w2, clu_b2;
    ad::Var topic_embed; // K x E
    ad::Var gene_embed;  // V x E

    static ModelParams init(const Dims& dims, Rng& rng) {
        auto xavier = [&rng](Index rows, Index cols) {
            Matrix w(rows, cols);
            const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
            rng.fill_uniform(w, -limit, limit);
            return ad::Var::parameter(std::move(w));
        };
        auto zeros = [](Index cols) { return ad::Var::parameter(Matrix::Zero(1, cols)); };
        auto gaussian = [&rng](Index rows, Index cols) {
            Matrix w(rows, cols);
            rng.fill_normal(w, 0.0, 0.02);
            return ad::Var::parameter(std::move(w));
        };

        ModelParams p;
        p.dims = dims;
        p.enc_w1 = xavier(dims.n_genes, dims.hidden);
        p.enc_b1 = zeros(dims.hidden);
        p.enc_w2 = xavier(dims.hidden, dims.hidden);
        p.enc_b2 = zeros(dims.hidden);
        p.mu_w = xavier(dims.hidden, dims.n_topics);
        p.mu_b = zeros(dims.n_topics);
        p.logvar_w = xavier(dims.hidden, dims.n_topics);
        p.logvar_b = zeros(dims.n_topics);
        p.clu_w1 = xavier(dims.ext_dim, dims.hidden);
        p.clu_b1 = zeros(dims.hidden);
        p.clu_w2 = xavier(dims.hidden, dims.n_topics);
        p.clu_b2 = zeros(dims.n_topics);
        p.topic_embed = gaussian(dims.n_topics, dims.embed_dim);
        p.gene_embed = gaussian(dims.n_genes, dims.embed_dim);
        return p;
    }

    std::vector<std::pair<std::string, ad::Var>> named() const {
        return {{"enc_w1", enc_w1}, {"enc_b1", enc_b1}, {"enc_w2", enc_w2}, {"enc_b2", enc_b2},
                {"mu_w", mu_w},     {"mu_b", mu_b},     {"logvar_w", logvar_w},
                {"logvar_b", logvar_b}, {"clu_w1", clu_w1}, {"clu_b1", clu_b1},
                {"clu_w2", clu_w2}, {"clu_b2", clu_b2}, {"topic_embed", topic_embed},
                {"gene_embed", gene_embed}};
    }

    std::vector<ad::Var> trainable() const {
        std::vector<ad::Var> out;
        for (auto& [name, var] : named()) out.push_back(var);
        return out;
    }
};

struct EncodeResult {
    ad::Var theta;   // B x K rows on the simplex
    ad::Var mu;      // B x K
    ad::Var logvar;  // B x K
};

// theta_i = softmax(mu + sigma .* zeta); zeta ~ N(0, I) when noise_rng is
// given (training), zeta = 0 otherwise (inference).
inline EncodeResult encode(const ModelParams& p, const Matrix& x_batch, Rng* noise_rng) {
    if (x_batch.cols() != p.dims.n_genes)
        throw std::invalid_argument("encode: input width != n_genes");
    const ad::Var x = ad::Var::constant(x_batch);
    const ad::Var h1 = ad::tanh(ad::add_rowvec(ad::matmul(x, p.enc_w1), p.enc_b1));
    const ad::Var h2 = ad::tanh(ad::add_rowvec(ad::matmul(h1, p.enc_w2), p.enc_b2));
    EncodeResult out;
    out.mu = ad::add_rowvec(ad::matmul(h2, p.mu_w), p.mu_b);
    out.logvar = ad::add_rowvec(ad::matmul(h2, p.logvar_w), p.logvar_b);
    ad::Var logits = out.mu;
    if (noise_rng != nullptr) {
        Matrix zeta(x_batch.rows(), p.dims.n_topics);
        noise_rng->fill_normal(zeta);
        const ad::Var sigma = ad::exp(ad::scale(out.logvar, 0.5));
        logits = ad::add(out.mu, ad::mul(sigma, ad::Var::constant(std::move(zeta))));
    }
    out.theta = ad::softmax_rows(logits);
    require_finite(out.theta.value(), "encode: theta");
    return out;
}

inline ad::Var encode_external(const ModelParams& p, const Matrix& v_batch) {
    if (v_batch.cols() != p.dims.ext_dim)
        throw std::invalid_argument("encode_external: input width != ext_dim");
    const ad::Var v = ad::Var::constant(v_batch);
    const ad::Var h = ad::tanh(ad::add_rowvec(ad::matmul(v, p.clu_w1), p.clu_b1));
    const ad::Var phi = ad::softmax_rows(ad::add_rowvec(ad::matmul(h, p.clu_w2), p.clu_b2));
    require_finite(phi.value(), "encode_external: phi");
    return phi;
}

// O_mk = softmax_k(-||g_m - t_k||^2 / tau): distance-softmax rows over topics.
inline ad::Var gene_topic_matrix(const ad::Var& gene_embed, const ad::Var& topic_embed, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("gene_topic_matrix: tau must be > 0");
    return ad::softmax_rows(ad::scale(ad::pairwise_sq_dists(gene_embed, topic_embed), -1.0 / tau));
}

inline Matrix gene_topic_matrix(const Matrix& gene_embed, const Matrix& topic_embed, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("gene_topic_matrix: tau must be > 0");
    return softmax_rows((pairwise_sq_dists(gene_embed, topic_embed) * (-1.0 / tau)));
}

// Mean over the batch of multinomial reconstruction error plus the Gaussian
// KL to the standard-normal prior on the pre-softmax latent.
inline ad::Var loss_re(const ad::Var& theta, const ad::Var& O, const Matrix& x_batch,
                       const ad::Var& mu, const ad::Var& logvar) {
    if ((x_batch.array() < 0.0).any())
        throw std::invalid_argument("loss_re: negative expression values");
    const double inv_b = 1.0 / static_cast<double>(x_batch.rows());
    const ad::Var logits = ad::matmul(theta, ad::transpose(O));
    const ad::Var recon =
        ad::scale(ad::sum(ad::mul(ad::Var::constant(x_batch), ad::log_softmax_rows(logits))), -inv_b);
    // KL(N(mu, sigma^2) || N(0, I)) = 0.5 * sum(sigma^2 + mu^2 - 1 - log sigma^2)
    const ad::Var kl_terms =
        ad::sub(ad::add_scalar(ad::add(ad::exp(logvar), ad::square(mu)), -1.0), logvar);
    const ad::Var kl = ad::scale(ad::sum(kl_terms), 0.5 * inv_b);
    return ad::add(recon, kl);
}

// -log sum_i theta_i . phi_i, one log over the batch total, as defined.
inline ad::Var loss_con(const ad::Var& theta, const ad::Var& phi) {
    ad::check_same_shape(theta, phi, "loss_con");
    const ad::Var total = ad::sum(ad::mul(theta, phi));
    if (!(total.item() > 0.0)) throw NumericError("loss_con: non-positive assignment overlap");
    return ad::neg(ad::log(total));
}

// Symmetric InfoNCE over assignment rows. For direction x->v the anchor is
// phi_i, the positive theta^N_i, and the negatives are the other cells'
// theta^N rows plus the other phi rows; cosine similarities divided by the
// temperature. Mirrored for v->x, averaged over the batch.
inline ad::Var loss_nei(const ad::Var& theta, const ad::Var& phi, const ad::Var& theta_nei,
                        const ad::Var& phi_nei, double temperature) {
    ad::check_same_shape(theta, phi, "loss_nei");
    ad::check_same_shape(theta, theta_nei, "loss_nei");
    ad::check_same_shape(theta, phi_nei, "loss_nei");
    if (temperature <= 0.0) throw std::invalid_argument("loss_nei: temperature must be > 0");
    const Index b = theta.rows();
    const double inv_t = 1.0 / temperature;

    // large negative shift removes self-similarity terms from the denominator
    Matrix self_mask = Matrix::Zero(b, b);
    for (Index i = 0; i < b; ++i) self_mask(i, i) = -1e9;
    const ad::Var mask = ad::Var::constant(self_mask);

    const ad::Var theta_hat = ad::l2_normalize_rows(theta);
    const ad::Var phi_hat = ad::l2_normalize_rows(phi);
    const ad::Var theta_nei_hat = ad::l2_normalize_rows(theta_nei);
    const ad::Var phi_nei_hat = ad::l2_normalize_rows(phi_nei);

    auto direction = [&](const ad::Var& anchor, const ad::Var& positive, const ad::Var& same_view) {
        const ad::Var cross = ad::scale(ad::matmul(anchor, ad::transpose(positive)), inv_t);
        const ad::Var same = ad::add(ad::scale(ad::matmul(anchor, ad::transpose(same_view)), inv_t), mask);
        const ad::Var denominator = ad::log_sum_exp_rows(ad::concat_cols(cross, same));
        return ad::sub(denominator, ad::diag_as_col(cross));
    };

    const ad::Var x_to_v = direction(phi_hat, theta_nei_hat, phi_hat);
    const ad::Var v_to_x = direction(theta_hat, phi_nei_hat, theta_hat);
    return ad::scale(ad::sum(ad::add(x_to_v, v_to_x)), 1.0 / static_cast<double>(b));
}

// Summed assignment entropies of both views (0 log 0 := 0); subtracted from
// the total loss with weight alpha, i.e. entropy is maximized. The
// mean-assignment variant scores the entropy of the batch-mean assignment
// instead.
inline ad::Var loss_reg(const ad::Var& theta, const ad::Var& phi, bool mean_assignment = false) {
    ad::check_same_shape(theta, phi, "loss_reg");
    if (!mean_assignment)
        return ad::neg(ad::add(ad::xlogx_sum(theta), ad::xlogx_sum(phi)));
    const double inv_b = 1.0 / static_cast<double>(theta.rows());
    const ad::Var ones = ad::Var::constant(Matrix::Constant(1, theta.rows(), inv_b));
    const ad::Var mean_theta = ad::matmul(ones, theta);
    const ad::Var mean_phi = ad::matmul(ones, phi);
    return ad::neg(ad::add(ad::xlogx_sum(mean_theta), ad::xlogx_sum(mean_phi)));
}

// Per topic, the h genes with largest weight, descending, ties by index.
inline std::vector<std::vector<std::string>> extract_top_genes(
    const Matrix& O, const std::vector<std::string>& gene_names, Index h) {
    if (h < 1 || h > O.rows()) throw std::invalid_argument("extract_top_genes: h must be in [1, V]");
    if (static_cast<Index>(gene_names.size()) != O.rows())
        throw std::invalid_argument("extract_top_genes: gene_names size mismatch");
    std::vector<std::vector<std::string>> out;
    std::vector<Index> order(static_cast<std::size_t>(O.rows()));
    for (Index k = 0; k < O.cols(); ++k) {
        std::iota(order.begin(), order.end(), Index{0});
        std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
            return O(a, k) > O(b, k);
        });
        std::vector<std::string> top;
        for (Index s = 0; s < h; ++s)
            top.push_back(gene_names[static_cast<std::size_t>(order[static_cast<std::size_t>(s)])]);
        out.push_back(std::move(top));
    }
    return out;
}

struct TrainConfig {
    Index n_topics = 100;
    Index embed_dim = 200;
    Index epochs = 500;
    Index batch_size = 0; // 0: 512 below 10k cells, 2048 otherwise
    double lr = 2e-3;
    double alpha = 5.0;
    double lambda = 20.0;
    double tau = 1.0;
    double epsilon = 0.05;
    double sinkhorn_tol = 1e-6;
    Index sinkhorn_max_iter = 1000;
    Index knn_k = 15;
    double temperature = 0.5;
    bool use_cve = true;
    bool mean_assignment_entropy = false;
    Index top_h = 10;
    std::uint64_t seed = 0;

    Index effective_batch(Index n_cells) const {
        Index b = batch_size > 0 ? batch_size : (n_cells < 10000 ? 512 : 2048);
        return std::min(b, n_cells);
    }

    void validate(Index n_cells) const {
        if (n_topics < 1 || embed_dim < 1 || epochs < 1)
            throw std::invalid_argument("TrainConfig: counts must be >= 1");
        if (batch_size < 0 || batch_size > n_cells)
            throw std::invalid_argument("TrainConfig: batch_size must be in [1, n_cells] (or 0 for auto)");
        if (lr <= 0.0 || tau <= 0.0 || epsilon <= 0.0 || sinkhorn_tol <= 0.0 || temperature <= 0.0)
            throw std::invalid_argument("TrainConfig: lr, tau, epsilon, sinkhorn_tol, temperature must be > 0");
        if (alpha < 0.0 || lambda < 0.0)
            throw std::invalid_argument("TrainConfig: alpha and lambda must be >= 0");
        if (use_cve && (knn_k < 1 || knn_k >= n_cells))
            throw std::invalid_argument("TrainConfig: require 1 <= knn_k < n_cells");
        if (sinkhorn_max_iter < 1)
            throw std::invalid_argument("TrainConfig: sinkhorn_max_iter must be >= 1");
        if (top_h < 1) throw std::invalid_argument("TrainConfig: top_h must be >= 1");
    }
};

struct EpochLog {
    Index epoch = 0;
    double re = 0, con = 0, nei = 0, reg = 0, ecr = 0, total = 0;
    double sinkhorn_iters = 0;
    double sinkhorn_violation = 0;
};

struct StepDiag {
    Index epoch = 0;
    Index step = 0;
    double re = 0, con = 0, nei = 0, reg = 0, ecr = 0, total = 0;
    const Matrix* theta = nullptr; // batch assignments of this step
    const Matrix* O = nullptr;
    const TransportPlan* plan = nullptr; // null when lambda == 0
};

struct TopicOutputs {
    Matrix theta;       // n x K
    Matrix gene_topic;  // V x K
    std::vector<std::vector<std::string>> top_genes;
};

struct TrainResult {
    ModelParams params;
    TopicOutputs outputs;
    std::vector<EpochLog> log;
};

namespace detail {

class RmsProp {
public:
    RmsProp(std::vector<ad::Var> params, double lr, double decay = 0.99, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), decay_(decay), eps_(eps) {
        for (const auto& p : params_)
            cache_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }

    void step() {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (!params_[i].node()->grad_ready) continue;
            const Matrix& g = params_[i].grad();
            cache_[i] = decay_ * cache_[i] + (1.0 - decay_) * g.cwiseProduct(g);
            params_[i].mutable_value() -=
                lr_ * g.cwiseQuotient((cache_[i].cwiseSqrt().array() + eps_).matrix());
        }
    }

private:
    std::vector<ad::Var> params_;
    std::vector<Matrix> cache_;
    double lr_, decay_, eps_;
};

inline Matrix take_rows(const Matrix& m, const std::vector<Index>& ids) {
    Matrix out(static_cast<Index>(ids.size()), m.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Index>(i)) = m.row(ids[i]);
    return out;
}

inline void require_finite_term(double v, const char* term, Index epoch) {
    if (!std::isfinite(v))
        throw NumericError(std::string(term) + " diverged (non-finite) at epoch " +
                           std::to_string(epoch));
}

} // namespace detail

// Mini-batch training: encode both views, build O, score reconstruction,
// cross-view consistency against sampled mutual neighbors, the entropy
// regularizer, and the OT clustering term; one RMSprop step per batch.
// Deterministic for a fixed seed (single-threaded).
inline TrainResult train(const Dataset& data, const TrainConfig& cfg,
                         const std::function<void(const StepDiag&)>& step_hook = nullptr) {
    const Index n = data.expression.rows();
    cfg.validate(n);
    if (cfg.use_cve && !data.external.has_value())
        throw DataError("train: external embeddings required unless CVE is disabled");
    if (data.external && data.external->rows() != n)
        throw DataError("train: external embedding row count != cell count");
    if ((data.expression.array() < 0.0).any())
        throw DataError("train: negative expression values");

    Dims dims;
    dims.n_genes = data.expression.cols();
    dims.ext_dim = data.external ? data.external->cols() : 1;
    dims.n_topics = cfg.n_topics;
    dims.embed_dim = cfg.embed_dim;

    Rng rng(cfg.seed);
    TrainResult result;
    result.params = ModelParams::init(dims, rng);
    ModelParams& p = result.params;

    NeighborIndex neighbors;
    if (cfg.use_cve) {
        neighbors.x_view = build_mutual_knn(data.expression, cfg.knn_k);
        neighbors.v_view = build_mutual_knn(*data.external, cfg.knn_k);
    }

    detail::RmsProp optimizer(p.trainable(), cfg.lr);
    const Index batch = cfg.effective_batch(n);
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});

    for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        EpochLog log;
        log.epoch = epoch;
        Index steps = 0;
        for (Index start = 0; start < n; start += batch) {
            const Index stop = std::min(n, start + batch);
            const std::vector<Index> ids(order.begin() + start, order.begin() + stop);
            const Index b = static_cast<Index>(ids.size());

            const Matrix x_batch = detail::take_rows(data.expression, ids);
            const EncodeResult enc = encode(p, x_batch, &rng);
            const ad::Var O = gene_topic_matrix(p.gene_embed, p.topic_embed, cfg.tau);
            ad::Var total = loss_re(enc.theta, O, x_batch, enc.mu, enc.logvar);
            const double re_v = total.item();
            detail::require_finite_term(re_v, "L_RE", epoch);

            double con_v = 0, nei_v = 0, reg_v = 0, ecr_v = 0;
            if (cfg.use_cve) {
                const Matrix v_batch = detail::take_rows(*data.external, ids);
                std::vector<Index> x_nei_ids, v_nei_ids;
                x_nei_ids.reserve(ids.size());
                v_nei_ids.reserve(ids.size());
                for (Index id : ids) x_nei_ids.push_back(sample_neighbor(neighbors, View::x, id, rng));
                for (Index id : ids) v_nei_ids.push_back(sample_neighbor(neighbors, View::v, id, rng));

                const ad::Var phi = encode_external(p, v_batch);
                const EncodeResult enc_nei =
                    encode(p, detail::take_rows(data.expression, x_nei_ids), &rng);
                const ad::Var phi_nei =
                    encode_external(p, detail::take_rows(*data.external, v_nei_ids));

                const ad::Var con = loss_con(enc.theta, phi);
                const ad::Var nei =
                    loss_nei(enc.theta, phi, enc_nei.theta, phi_nei, cfg.temperature);
                const ad::Var reg = loss_reg(enc.theta, phi, cfg.mean_assignment_entropy);
                con_v = con.item();
                nei_v = nei.item();
                reg_v = reg.item();
                detail::require_finite_term(con_v, "L_CON", epoch);
                detail::require_finite_term(nei_v, "L_NEI", epoch);
                detail::require_finite_term(reg_v, "L_REG", epoch);
                total = ad::add(total, ad::add(con, ad::sub(nei, ad::scale(reg, cfg.alpha))));
            }

            TransportPlan plan;
            bool have_plan = false;
            if (cfg.lambda > 0.0) {
                EcrResult ecr = ecr_loss(p.gene_embed, p.topic_embed, cfg.epsilon,
                                         cfg.sinkhorn_max_iter, cfg.sinkhorn_tol);
                ecr_v = ecr.loss.item();
                detail::require_finite_term(ecr_v, "L_ECR", epoch);
                total = ad::add(total, ad::scale(ecr.loss, cfg.lambda));
                plan = std::move(ecr.plan);
                have_plan = true;
            }

            const double total_v = total.item();
            detail::require_finite_term(total_v, "total loss", epoch);
            total.backward();
            optimizer.step();

            if (step_hook) {
                StepDiag diag;
                diag.epoch = epoch;
                diag.step = steps;
                diag.re = re_v;
                diag.con = con_v;
                diag.nei = nei_v;
                diag.reg = reg_v;
                diag.ecr = ecr_v;
                diag.total = total_v;
                diag.theta = &enc.theta.value();
                diag.O = &O.value();
                diag.plan = have_plan ? &plan : nullptr;
                step_hook(diag);
            }

            log.re += re_v;
            log.con += con_v;
            log.nei += nei_v;
            log.reg += reg_v;
            log.ecr += ecr_v;
            log.total += total_v;
            log.sinkhorn_iters += have_plan ? static_cast<double>(plan.iterations) : 0.0;
            log.sinkhorn_violation += have_plan ? plan.marginal_violation : 0.0;
            ++steps;
        }
        const double inv_steps = 1.0 / static_cast<double>(steps);
        log.re *= inv_steps;
        log.con *= inv_steps;
        log.nei *= inv_steps;
        log.reg *= inv_steps;
        log.ecr *= inv_steps;
        log.total *= inv_steps;
        log.sinkhorn_iters *= inv_steps;
        log.sinkhorn_violation *= inv_steps;
        result.log.push_back(log);
    }

    // inference pass: posterior mean, no sampling
    result.outputs.theta.resize(n, cfg.n_topics);
    for (Index start = 0; start < n; start += batch) {
        const Index stop = std::min(n, start + batch);
        const EncodeResult enc =
            encode(p, data.expression.middleRows(start, stop - start), nullptr);
        result.outputs.theta.middleRows(start, stop - start) = enc.theta.value();
    }
    result.outputs.gene_topic = gene_topic_matrix(p.gene_embed.value(), p.topic_embed.value(), cfg.tau);
    result.outputs.top_genes =
        extract_top_genes(result.outputs.gene_topic, data.gene_names, std::min(cfg.top_h, dims.n_genes));
    return result;
}

} // namespace sctopic
