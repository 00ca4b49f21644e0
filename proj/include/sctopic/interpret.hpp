#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sctopic/cluster.hpp"
#include "sctopic/data_io.hpp"
#include "sctopic/matrix.hpp"
#include "sctopic/rng.hpp"
#include "sctopic/stats.hpp"

namespace sctopic {

struct MetricConfig {
    Index top_h = 10;
    Index n_perm = 1000;
    double ora_q_threshold = 0.05;
    double gsea_q_threshold = 0.01;
    int gsea_weight_exponent = 1; // 1 = weighted; 0 = classic Kolmogorov statistic
    std::uint64_t seed = 0;
    int n_threads = 1;
};

struct EnrichmentRow {
    Index topic = 0;
    std::string pathway;
    double p = 1.0;
    double q = 1.0;
    double stat = 0.0; // overlap count for ORA, enrichment score for GSEA
};

struct EnrichmentResult {
    std::vector<EnrichmentRow> rows;                      // tested pairs, topic-major order
    std::vector<std::pair<Index, std::string>> skipped;   // degenerate pairs
    double q_threshold = 0.0;
    std::vector<std::string> significant;                 // multiset of enriched pathway names
    double n_unique = 0.0;
    double uniqueness = 1.0;                              // 1.0 when nothing is enriched
    double quality = 0.0;

    void finalize(double threshold) {
        q_threshold = threshold;
        significant.clear();
        for (const auto& r : rows)
            if (r.q < threshold) significant.push_back(r.pathway);
        std::set<std::string> unique(significant.begin(), significant.end());
        n_unique = static_cast<double>(unique.size());
        uniqueness = significant.empty()
                         ? 1.0
                         : n_unique / static_cast<double>(significant.size());
        quality = n_unique * uniqueness;
    }
};

// NPMI-style coherence against pathway co-membership. Pairs that never
// co-occur contribute 0; a pair present in every pathway takes the limit
// value 1.
inline double topic_coherence(const std::vector<std::vector<std::string>>& top_genes,
                              const PathwayDB& db) {
    if (db.pathways.empty()) throw DataError("topic_coherence: empty pathway database");
    for (const auto& topic : top_genes)
        if (topic.size() < 2)
            throw std::invalid_argument("topic_coherence: need at least 2 genes per topic");

    const std::size_t m = db.pathways.size();
    std::unordered_map<std::string, std::vector<std::uint64_t>> membership;
    const std::size_t blocks = (m + 63) / 64;
    for (const auto& topic : top_genes)
        for (const auto& g : topic)
            membership.emplace(g, std::vector<std::uint64_t>(blocks, 0));
    for (std::size_t pi = 0; pi < m; ++pi) {
        for (const auto& g : db.pathways[pi].genes) {
            auto it = membership.find(g);
            if (it != membership.end()) it->second[pi / 64] |= std::uint64_t{1} << (pi % 64);
        }
    }
    auto count_bits = [](const std::vector<std::uint64_t>& bits) {
        std::size_t c = 0;
        for (auto b : bits) c += static_cast<std::size_t>(__builtin_popcountll(b));
        return c;
    };
    auto count_and = [](const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
        std::size_t c = 0;
        for (std::size_t i = 0; i < a.size(); ++i)
            c += static_cast<std::size_t>(__builtin_popcountll(a[i] & b[i]));
        return c;
    };

    double tc = 0.0;
    for (const auto& topic : top_genes) {
        const std::size_t h = topic.size();
        double topic_sum = 0.0;
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = i + 1; j < h; ++j) {
                const auto& bi = membership.at(topic[i]);
                const auto& bj = membership.at(topic[j]);
                const std::size_t cij = count_and(bi, bj);
                if (cij == 0) continue;
                if (cij == m) {
                    topic_sum += 1.0;
                    continue;
                }
                const double pij = static_cast<double>(cij) / static_cast<double>(m);
                const double pi_ = static_cast<double>(count_bits(bi)) / static_cast<double>(m);
                const double pj_ = static_cast<double>(count_bits(bj)) / static_cast<double>(m);
                topic_sum += std::log(pij / (pi_ * pj_)) / (-std::log(pij));
            }
        }
        tc += topic_sum / (static_cast<double>(h) * (static_cast<double>(h) - 1.0) / 2.0);
    }
    return tc / static_cast<double>(top_genes.size());
}

// Unique genes over the pooled top-gene multiset.
inline double topic_diversity(const std::vector<std::vector<std::string>>& top_genes) {
    if (top_genes.empty()) throw std::invalid_argument("topic_diversity: no topics");
    std::size_t total = 0;
    std::set<std::string> unique;
    for (const auto& topic : top_genes) {
        total += topic.size();
        unique.insert(topic.begin(), topic.end());
    }
    return static_cast<double>(unique.size()) / static_cast<double>(total);
}

// Purity of argmax-topic cell groups against the label classes.
inline double interpretation_purity(const Matrix& theta, const std::vector<int>& labels) {
    if (static_cast<Index>(labels.size()) != theta.rows())
        throw std::invalid_argument("interpretation_purity: label/theta length mismatch");
    const std::vector<int> assign = argmax_rows(theta);
    std::map<int, std::map<int, long long>> groups;
    for (std::size_t i = 0; i < assign.size(); ++i) ++groups[assign[i]][labels[i]];
    double purity = 0.0;
    for (const auto& [topic, class_counts] : groups) {
        long long best = 0;
        for (const auto& [cls, count] : class_counts) best = std::max(best, count);
        purity += static_cast<double>(best);
    }
    return purity / static_cast<double>(labels.size());
}

// Hypergeometric over-representation of each topic's top genes inside each
// pathway, with joint BH correction across all (topic, pathway) pairs.
// Pathways with no genes in the universe are not tested.
inline EnrichmentResult ora(const std::vector<std::vector<std::string>>& top_genes,
                            const PathwayDB& db, const std::vector<std::string>& universe,
                            double q_threshold) {
    const std::unordered_set<std::string> uni(universe.begin(), universe.end());
    std::vector<std::unordered_set<std::string>> path_sets;
    std::vector<std::size_t> path_ids;
    for (std::size_t pi = 0; pi < db.pathways.size(); ++pi) {
        std::unordered_set<std::string> s;
        for (const auto& g : db.pathways[pi].genes)
            if (uni.count(g)) s.insert(g);
        if (!s.empty()) {
            path_sets.push_back(std::move(s));
            path_ids.push_back(pi);
        }
    }
    if (path_sets.empty())
        throw DataError("ora: no pathway overlaps the gene universe");

    EnrichmentResult out;
    for (std::size_t k = 0; k < top_genes.size(); ++k) {
        std::vector<std::string> top;
        for (const auto& g : top_genes[k])
            if (uni.count(g)) top.push_back(g);
        for (std::size_t s = 0; s < path_sets.size(); ++s) {
            long long overlap = 0;
            for (const auto& g : top)
                if (path_sets[s].count(g)) ++overlap;
            EnrichmentRow row;
            row.topic = static_cast<Index>(k);
            row.pathway = db.pathways[path_ids[s]].name;
            row.stat = static_cast<double>(overlap);
            row.p = hypergeom_upper_tail(static_cast<long long>(uni.size()),
                                         static_cast<long long>(path_sets[s].size()),
                                         static_cast<long long>(top.size()), overlap);
            out.rows.push_back(std::move(row));
        }
    }
    std::vector<double> pvals;
    pvals.reserve(out.rows.size());
    for (const auto& r : out.rows) pvals.push_back(r.p);
    const auto qvals = benjamini_hochberg(pvals);
    for (std::size_t i = 0; i < out.rows.size(); ++i) out.rows[i].q = qvals[i];
    out.finalize(q_threshold);
    return out;
}

struct RunningScore {
    double es = 0.0;
    double end_value = 0.0;
    bool degenerate = false;
};

// Weighted Kolmogorov-Smirnov running sum down a ranked gene list: member
// hits add |r|^p / sum(|r|^p), misses subtract 1/(V - |S|). The signed
// extremum is the enrichment score; the sum returns to 0 at the end.
inline RunningScore gsea_running_score(const std::vector<double>& ranked_scores,
                                       const std::vector<char>& is_member, int weight_exponent) {
    const std::size_t v = ranked_scores.size();
    std::size_t members = 0;
    double norm = 0.0;
    for (std::size_t i = 0; i < v; ++i) {
        if (is_member[i]) {
            ++members;
            norm += weight_exponent == 0 ? 1.0 : std::abs(ranked_scores[i]);
        }
    }
    RunningScore out;
    if (members == 0 || members == v || norm == 0.0) {
        out.degenerate = true;
        return out;
    }
    const double miss = 1.0 / static_cast<double>(v - members);
    double rs = 0.0, hi = 0.0, lo = 0.0;
    for (std::size_t i = 0; i < v; ++i) {
        if (is_member[i])
            rs += (weight_exponent == 0 ? 1.0 : std::abs(ranked_scores[i])) / norm;
        else
            rs -= miss;
        hi = std::max(hi, rs);
        lo = std::min(lo, rs);
    }
    out.end_value = rs;
    out.es = hi >= -lo ? hi : lo;
    return out;
}

// GSEA across all (topic, pathway) pairs: genes ranked by topic weight,
// significance from gene-set permutations with a per-pair RNG substream
// (bit-identical results for any thread count), joint BH correction.
inline EnrichmentResult gsea(const Matrix& O, const std::vector<std::string>& gene_names,
                             const PathwayDB& db, Index n_perm, double q_threshold,
                             std::uint64_t seed, int weight_exponent = 1, int n_threads = 1) {
    if (n_perm < 1) throw std::invalid_argument("gsea: n_perm must be >= 1");
    const Index v = O.rows();
    const Index k_topics = O.cols();
    if (static_cast<Index>(gene_names.size()) != v)
        throw std::invalid_argument("gsea: gene_names size mismatch");

    std::unordered_map<std::string, Index> gene_row;
    for (Index g = 0; g < v; ++g) gene_row.emplace(gene_names[static_cast<std::size_t>(g)], g);

    // membership by gene row, shared across topics
    std::vector<std::vector<Index>> path_rows(db.pathways.size());
    for (std::size_t pi = 0; pi < db.pathways.size(); ++pi) {
        for (const auto& g : db.pathways[pi].genes) {
            auto it = gene_row.find(g);
            if (it != gene_row.end()) path_rows[pi].push_back(it->second);
        }
        if (path_rows[pi].empty())
            throw DataError("gsea: pathway '" + db.pathways[pi].name + "' has no gene in the ranking");
    }

    // per topic: ranked row order and ranked scores
    std::vector<std::vector<Index>> rank_of_row(static_cast<std::size_t>(k_topics),
                                                std::vector<Index>(static_cast<std::size_t>(v)));
    std::vector<std::vector<double>> ranked(static_cast<std::size_t>(k_topics),
                                            std::vector<double>(static_cast<std::size_t>(v)));
    {
        std::vector<Index> order(static_cast<std::size_t>(v));
        for (Index k = 0; k < k_topics; ++k) {
            std::iota(order.begin(), order.end(), Index{0});
            std::stable_sort(order.begin(), order.end(),
                             [&](Index a, Index b) { return O(a, k) > O(b, k); });
            for (Index pos = 0; pos < v; ++pos) {
                const Index row = order[static_cast<std::size_t>(pos)];
                rank_of_row[static_cast<std::size_t>(k)][static_cast<std::size_t>(row)] = pos;
                ranked[static_cast<std::size_t>(k)][static_cast<std::size_t>(pos)] = O(row, k);
            }
        }
    }

    struct Cell {
        bool skipped = false;
        double es = 0.0;
        double p = 1.0;
        double end_value = 0.0;
    };
    const std::size_t n_paths = db.pathways.size();
    std::vector<Cell> cells(static_cast<std::size_t>(k_topics) * n_paths);

    auto run_cell = [&](Index k, std::size_t pi) {
        Cell& cell = cells[static_cast<std::size_t>(k) * n_paths + pi];
        const auto& scores = ranked[static_cast<std::size_t>(k)];
        std::vector<char> member(static_cast<std::size_t>(v), 0);
        for (Index row : path_rows[pi])
            member[static_cast<std::size_t>(rank_of_row[static_cast<std::size_t>(k)][static_cast<std::size_t>(row)])] = 1;
        const RunningScore real = gsea_running_score(scores, member, weight_exponent);
        if (real.degenerate) {
            cell.skipped = true;
            return;
        }
        cell.es = real.es;
        cell.end_value = real.end_value;

        Rng perm_rng(mix_seed(seed, static_cast<std::uint64_t>(k) * n_paths + pi));
        const auto set_size = static_cast<Index>(path_rows[pi].size());
        Index at_least = 0;
        std::vector<char> perm_member(static_cast<std::size_t>(v));
        for (Index b = 0; b < n_perm; ++b) {
            std::fill(perm_member.begin(), perm_member.end(), 0);
            for (Index pos : perm_rng.sample_without_replacement(v, set_size))
                perm_member[static_cast<std::size_t>(pos)] = 1;
            const RunningScore null_score = gsea_running_score(scores, perm_member, weight_exponent);
            if (!null_score.degenerate && std::abs(null_score.es) >= std::abs(real.es)) ++at_least;
        }
        cell.p = (1.0 + static_cast<double>(at_least)) / (1.0 + static_cast<double>(n_perm));
    };

    const std::size_t total_cells = cells.size();
    const int threads = std::max(1, n_threads);
    if (threads == 1) {
        for (std::size_t idx = 0; idx < total_cells; ++idx)
            run_cell(static_cast<Index>(idx / n_paths), idx % n_paths);
    } else {
        std::vector<std::thread> pool;
        std::size_t chunk = (total_cells + static_cast<std::size_t>(threads) - 1) /
                            static_cast<std::size_t>(threads);
        for (int t = 0; t < threads; ++t) {
            const std::size_t lo = static_cast<std::size_t>(t) * chunk;
            const std::size_t hi = std::min(total_cells, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back([&, lo, hi]() {
                for (std::size_t idx = lo; idx < hi; ++idx)
                    run_cell(static_cast<Index>(idx / n_paths), idx % n_paths);
            });
        }
        for (auto& th : pool) th.join();
    }

    EnrichmentResult out;
    std::vector<double> pvals;
    for (Index k = 0; k < k_topics; ++k) {
        for (std::size_t pi = 0; pi < n_paths; ++pi) {
            const Cell& cell = cells[static_cast<std::size_t>(k) * n_paths + pi];
            if (cell.skipped) {
                out.skipped.emplace_back(k, db.pathways[pi].name);
                continue;
            }
            EnrichmentRow row;
            row.topic = k;
            row.pathway = db.pathways[pi].name;
            row.p = cell.p;
            row.stat = cell.es;
            out.rows.push_back(std::move(row));
            pvals.push_back(cell.p);
        }
    }
    const auto qvals = benjamini_hochberg(pvals);
    for (std::size_t i = 0; i < out.rows.size(); ++i) out.rows[i].q = qvals[i];
    out.finalize(q_threshold);
    return out;
}

struct InterpretReport {
    double tc = 0, td = 0, tq = 0, ip = 0;
    double ora_n = 0, ora_u = 1, ora_q = 0;
    double gsea_n = 0, gsea_u = 1, gsea_q = 0;
    EnrichmentResult ora_detail, gsea_detail;
};

struct TopicSummary {
    Matrix theta;
    Matrix gene_topic;
    std::vector<std::string> gene_names;
    std::vector<std::vector<std::string>> top_genes;
};

inline InterpretReport full_report(const TopicSummary& topics, const std::vector<int>& labels,
                                   const PathwayDB& db, const MetricConfig& cfg) {
    InterpretReport report;
    report.tc = topic_coherence(topics.top_genes, db);
    report.td = topic_diversity(topics.top_genes);
    report.tq = report.tc * report.td;
    report.ip = interpretation_purity(topics.theta, labels);

    report.ora_detail = ora(topics.top_genes, db, topics.gene_names, cfg.ora_q_threshold);
    report.ora_n = report.ora_detail.n_unique;
    report.ora_u = report.ora_detail.uniqueness;
    report.ora_q = report.ora_detail.quality;

    report.gsea_detail = gsea(topics.gene_topic, topics.gene_names, db, cfg.n_perm,
                              cfg.gsea_q_threshold, cfg.seed, cfg.gsea_weight_exponent,
                              cfg.n_threads);
    report.gsea_n = report.gsea_detail.n_unique;
    report.gsea_u = report.gsea_detail.uniqueness;
    report.gsea_q = report.gsea_detail.quality;
    return report;
}

} // namespace sctopic
