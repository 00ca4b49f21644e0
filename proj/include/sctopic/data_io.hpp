#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "sctopic/error.hpp"
#include "sctopic/io_util.hpp"
#include "sctopic/matrix.hpp"
#include "sctopic/rng.hpp"

namespace sctopic {

struct Dataset {
    Matrix expression;                        // n x V, nonnegative
    std::optional<Matrix> external;           // n x d
    std::vector<std::string> gene_names;      // V, unique
    std::vector<std::string> cell_ids;        // n
    std::optional<std::vector<int>> labels;   // dense ids, first-appearance order
    std::vector<std::string> label_names;
};

struct Pathway {
    std::string name;
    std::vector<std::string> genes; // deduplicated, file order
};

struct PathwayDB {
    std::vector<Pathway> pathways;
};

struct ExpressionData {
    Matrix values;
    std::vector<std::string> gene_names;
    std::vector<std::string> cell_ids;
};

namespace detail {

inline void check_expression(const Matrix& m, const std::vector<std::string>& genes,
                             const std::string& where) {
    std::unordered_set<std::string> seen;
    for (const auto& g : genes) {
        if (!seen.insert(g).second) throw DataError(where + ": duplicate gene name '" + g + "'");
    }
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            if (!(v >= 0.0)) // also catches NaN
                throw DataError(where + ": negative or non-finite value at (" +
                                std::to_string(i) + "," + std::to_string(j) + ")");
        }
    }
}

} // namespace detail

// CSV layout: header row "cell_id,<gene>,<gene>,..."; one row per cell,
// first column the cell id. No quoting; names must not contain commas.
inline ExpressionData load_expression_csv(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    std::string line;
    std::size_t lineno = 0;
    const std::string fname = path.filename().string();

    if (!std::getline(in, line)) throw DataError(fname + ": empty file");
    ++lineno;
    line = detail::strip_cr(line);
    auto header = detail::split(line, ',');
    if (header.size() < 2) throw DataError(fname + ":1: header needs at least one gene column");

    ExpressionData out;
    out.gene_names.assign(header.begin() + 1, header.end());

    std::vector<double> values;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        auto fields = detail::split(line, ',');
        const std::string where = fname + ":" + std::to_string(lineno);
        if (fields.size() != header.size())
            throw DataError(where + ": expected " + std::to_string(header.size()) +
                            " fields, got " + std::to_string(fields.size()));
        out.cell_ids.emplace_back(fields[0]);
        for (std::size_t j = 1; j < fields.size(); ++j)
            values.push_back(detail::parse_double(fields[j], where));
    }
    const Index n = static_cast<Index>(out.cell_ids.size());
    const Index v = static_cast<Index>(out.gene_names.size());
    if (n == 0) throw DataError(fname + ": no data rows");
    out.values = Eigen::Map<const Matrix>(values.data(), n, v);
    detail::check_expression(out.values, out.gene_names, fname);
    return out;
}

// MatrixMarket coordinate format; rows are cells, columns genes. Gene and
// cell names are synthesized since the format carries none.
inline ExpressionData load_expression_mtx(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    const std::string fname = path.filename().string();
    std::string line;
    std::size_t lineno = 0;

    if (!std::getline(in, line)) throw DataError(fname + ": empty file");
    ++lineno;
    line = detail::strip_cr(line);
    if (line.rfind("%%MatrixMarket matrix coordinate real general", 0) != 0 &&
        line.rfind("%%MatrixMarket matrix coordinate integer general", 0) != 0)
        throw DataError(fname + ":1: expected '%%MatrixMarket matrix coordinate real general'");

    while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (!line.empty() && line[0] != '%') break;
    }
    auto dims = detail::split(line, ' ');
    std::string where = fname + ":" + std::to_string(lineno);
    if (dims.size() != 3) throw DataError(where + ": expected 'rows cols nnz'");
    const auto rows = detail::parse_int(dims[0], where);
    const auto cols = detail::parse_int(dims[1], where);
    const auto nnz = detail::parse_int(dims[2], where);
    if (rows < 1 || cols < 1 || nnz < 0) throw DataError(where + ": bad dimensions");

    ExpressionData out;
    out.values = Matrix::Zero(rows, cols);
    long long seen = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        where = fname + ":" + std::to_string(lineno);
        auto fields = detail::split(line, ' ');
        if (fields.size() != 3) throw DataError(where + ": expected 'i j value'");
        const auto i = detail::parse_int(fields[0], where);
        const auto j = detail::parse_int(fields[1], where);
        const double v = detail::parse_double(fields[2], where);
        if (i < 1 || i > rows || j < 1 || j > cols)
            throw DataError(where + ": index out of range");
        out.values(i - 1, j - 1) += v; // duplicates accumulate
        ++seen;
    }
    if (seen != nnz)
        throw DataError(fname + ": header promised " + std::to_string(nnz) +
                        " entries, file has " + std::to_string(seen));
    for (long long i = 1; i <= rows; ++i) out.cell_ids.push_back("cell_" + std::to_string(i));
    for (long long j = 1; j <= cols; ++j) out.gene_names.push_back("gene_" + std::to_string(j));
    detail::check_expression(out.values, out.gene_names, fname);
    return out;
}

enum class ExpressionFormat { csv, mtx };

inline ExpressionData load_expression(const std::filesystem::path& path, ExpressionFormat fmt) {
    return fmt == ExpressionFormat::csv ? load_expression_csv(path) : load_expression_mtx(path);
}

inline void write_expression_csv(const std::filesystem::path& path, const Matrix& values,
                                 const std::vector<std::string>& gene_names,
                                 const std::vector<std::string>& cell_ids) {
    std::string buf = "cell_id";
    for (const auto& g : gene_names) { buf += ','; buf += g; }
    buf += '\n';
    for (Index i = 0; i < values.rows(); ++i) {
        buf += cell_ids[static_cast<std::size_t>(i)];
        for (Index j = 0; j < values.cols(); ++j) {
            buf += ',';
            buf += detail::format_double(values(i, j));
        }
        buf += '\n';
    }
    detail::atomic_write(path, buf);
}

inline void write_expression_mtx(const std::filesystem::path& path, const Matrix& values) {
    std::string body;
    long long nnz = 0;
    for (Index i = 0; i < values.rows(); ++i) {
        for (Index j = 0; j < values.cols(); ++j) {
            if (values(i, j) != 0.0) {
                body += std::to_string(i + 1) + " " + std::to_string(j + 1) + " " +
                        detail::format_double(values(i, j)) + "\n";
                ++nnz;
            }
        }
    }
    std::string buf = "%%MatrixMarket matrix coordinate real general\n";
    buf += std::to_string(values.rows()) + " " + std::to_string(values.cols()) + " " +
           std::to_string(nnz) + "\n";
    buf += body;
    detail::atomic_write(path, buf);
}

// Headerless CSV of n x d reals, row order matching the expression file.
inline Matrix load_embedding_csv(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    const std::string fname = path.filename().string();
    std::string line;
    std::size_t lineno = 0;
    std::vector<double> values;
    Index cols = -1, rows = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        const std::string where = fname + ":" + std::to_string(lineno);
        auto fields = detail::split(line, ',');
        if (cols < 0) cols = static_cast<Index>(fields.size());
        else if (static_cast<Index>(fields.size()) != cols)
            throw DataError(where + ": ragged row");
        for (auto f : fields) values.push_back(detail::parse_double(f, where));
        ++rows;
    }
    if (rows == 0) throw DataError(fname + ": empty file");
    Matrix out = Eigen::Map<const Matrix>(values.data(), rows, cols);
    require_finite(out, fname);
    return out;
}

inline void write_embedding_csv(const std::filesystem::path& path, const Matrix& values) {
    std::string buf;
    for (Index i = 0; i < values.rows(); ++i) {
        for (Index j = 0; j < values.cols(); ++j) {
            if (j) buf += ',';
            buf += detail::format_double(values(i, j));
        }
        buf += '\n';
    }
    detail::atomic_write(path, buf);
}

struct LabelData {
    std::vector<std::string> cell_ids;
    std::vector<int> labels;              // dense ids in first-appearance order
    std::vector<std::string> label_names;
};

// Two-column CSV: cell id, label string. No header.
inline LabelData load_labels_csv(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    const std::string fname = path.filename().string();
    std::string line;
    std::size_t lineno = 0;
    LabelData out;
    std::vector<std::string> names;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        auto fields = detail::split(line, ',');
        if (fields.size() != 2)
            throw DataError(fname + ":" + std::to_string(lineno) + ": expected 'cell_id,label'");
        out.cell_ids.emplace_back(fields[0]);
        const std::string name(fields[1]);
        auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) {
            names.push_back(name);
            out.labels.push_back(static_cast<int>(names.size()) - 1);
        } else {
            out.labels.push_back(static_cast<int>(it - names.begin()));
        }
    }
    if (out.labels.empty()) throw DataError(fname + ": empty file");
    out.label_names = std::move(names);
    return out;
}

inline void write_labels_csv(const std::filesystem::path& path,
                             const std::vector<std::string>& cell_ids,
                             const std::vector<std::string>& labels) {
    std::string buf;
    for (std::size_t i = 0; i < cell_ids.size(); ++i)
        buf += cell_ids[i] + "," + labels[i] + "\n";
    detail::atomic_write(path, buf);
}

// GMT: one pathway per line, tab-separated: name, description (ignored),
// then genes. Genes within one set are deduplicated.
inline PathwayDB parse_gmt(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    const std::string fname = path.filename().string();
    std::string line;
    std::size_t lineno = 0;
    PathwayDB db;
    std::unordered_set<std::string> names;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        auto fields = detail::split(line, '\t');
        const std::string where = fname + ":" + std::to_string(lineno);
        if (fields.size() < 3)
            throw DataError(where + ": GMT line needs name, description and at least one gene");
        Pathway p;
        p.name = std::string(fields[0]);
        if (!names.insert(p.name).second)
            throw DataError(where + ": duplicate pathway name '" + p.name + "'");
        std::unordered_set<std::string> seen;
        for (std::size_t j = 2; j < fields.size(); ++j) {
            std::string g(fields[j]);
            if (g.empty()) continue;
            if (seen.insert(g).second) p.genes.push_back(std::move(g));
        }
        if (p.genes.empty()) throw DataError(where + ": pathway has no genes");
        db.pathways.push_back(std::move(p));
    }
    return db;
}

inline void write_gmt(const std::filesystem::path& path, const PathwayDB& db) {
    std::string buf;
    for (const auto& p : db.pathways) {
        buf += p.name + "\t-";
        for (const auto& g : p.genes) { buf += '\t'; buf += g; }
        buf += '\n';
    }
    detail::atomic_write(path, buf);
}

struct PreprocessResult {
    Matrix matrix;                           // n x n_hvg, log1p-transformed
    std::vector<std::string> gene_names;     // selected, highest variance first
    std::vector<Index> selected_columns;     // indices into the input
};

// log1p, then keep the n_hvg genes with the highest variance of the
// transformed values (descending variance, ties by original column index).
inline PreprocessResult preprocess(const Matrix& x, const std::vector<std::string>& gene_names,
                                   Index n_hvg) {
    const Index v = x.cols();
    if (n_hvg < 1 || n_hvg > v)
        throw std::invalid_argument("preprocess: n_hvg must be in [1, n_genes]");
    if (static_cast<Index>(gene_names.size()) != v)
        throw std::invalid_argument("preprocess: gene_names size mismatch");

    Matrix logged = x.unaryExpr([](double e) { return std::log1p(e); });
    const double n = static_cast<double>(x.rows());
    std::vector<std::pair<double, Index>> var_idx;
    var_idx.reserve(static_cast<std::size_t>(v));
    for (Index j = 0; j < v; ++j) {
        const double mean = logged.col(j).mean();
        const double var = (logged.col(j).array() - mean).square().sum() / n;
        var_idx.emplace_back(var, j);
    }
    std::sort(var_idx.begin(), var_idx.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });

    PreprocessResult out;
    out.matrix.resize(x.rows(), n_hvg);
    for (Index s = 0; s < n_hvg; ++s) {
        const Index j = var_idx[static_cast<std::size_t>(s)].second;
        out.matrix.col(s) = logged.col(j);
        out.gene_names.push_back(gene_names[static_cast<std::size_t>(j)]);
        out.selected_columns.push_back(j);
    }
    return out;
}

struct SynthConfig {
    Index n_cells = 500;
    Index n_genes = 300;
    Index n_topics = 5;
    double zipf_exponent = 1.2;
    double noise_level = 0.1;
    Index view_dim = 10;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_cells < 1 || n_genes < 1 || n_topics < 1 || view_dim < 1)
            throw std::invalid_argument("SynthConfig: counts must be >= 1");
        if (n_topics > n_cells)
            throw std::invalid_argument("SynthConfig: n_topics must be <= n_cells");
        if (zipf_exponent < 0.0)
            throw std::invalid_argument("SynthConfig: zipf_exponent must be >= 0");
        if (noise_level < 0.0 || noise_level > 1.0)
            throw std::invalid_argument("SynthConfig: noise_level must be in [0,1]");
    }
};

struct SynthData {
    Dataset dataset;
    Matrix topic_gene;                                // K x V planted distributions
    std::vector<int> labels;                          // planted topic per cell
    std::vector<std::vector<std::string>> signature_genes; // boosted block per topic
};

// Planted-topic generator. Gene popularity follows rank^(-zipf); each topic
// boosts a disjoint block of floor(V/K) signature genes by 10x. Cells get
// balanced round-robin topics, multinomial counts with library size
// uniform in [800, 1200], and an external view built from a fixed random
// projection of the one-hot topic plus Gaussian noise.
inline SynthData generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    const Index V = cfg.n_genes, K = cfg.n_topics, n = cfg.n_cells;
    Rng rng(cfg.seed);

    Vector base(V);
    for (Index m = 0; m < V; ++m)
        base(m) = std::pow(static_cast<double>(m + 1), -cfg.zipf_exponent);

    const Index block = V / K;
    SynthData out;
    out.topic_gene.resize(K, V);
    for (Index k = 0; k < K; ++k) {
        Vector t = base;
        for (Index m = k * block; m < (k + 1) * block; ++m) t(m) *= 10.0;
        out.topic_gene.row(k) = t / t.sum();
    }

    out.labels.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) out.labels[static_cast<std::size_t>(i)] = static_cast<int>(i % K);

    Matrix projection(K, cfg.view_dim);
    rng.fill_normal(projection);

    // cumulative distributions per topic for multinomial sampling
    std::vector<std::vector<double>> cdfs(static_cast<std::size_t>(K));
    for (Index k = 0; k < K; ++k) {
        auto& cdf = cdfs[static_cast<std::size_t>(k)];
        cdf.resize(static_cast<std::size_t>(V));
        double acc = 0.0;
        for (Index m = 0; m < V; ++m) {
            acc += out.topic_gene(k, m);
            cdf[static_cast<std::size_t>(m)] = acc;
        }
    }

    Matrix expr = Matrix::Zero(n, V);
    for (Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(out.labels[static_cast<std::size_t>(i)]);
        const auto library = rng.uniform_int(800, 1200);
        for (std::int64_t t = 0; t < library; ++t)
            expr(i, static_cast<Index>(rng.categorical(cdfs[k]))) += 1.0;
    }

    Matrix external(n, cfg.view_dim);
    for (Index i = 0; i < n; ++i) {
        const Index k = out.labels[static_cast<std::size_t>(i)];
        for (Index j = 0; j < cfg.view_dim; ++j)
            external(i, j) = projection(k, j) + cfg.noise_level * rng.normal();
    }

    out.dataset.expression = std::move(expr);
    out.dataset.external = std::move(external);
    for (Index j = 1; j <= V; ++j) out.dataset.gene_names.push_back("gene_" + std::to_string(j));
    for (Index i = 1; i <= n; ++i) out.dataset.cell_ids.push_back("cell_" + std::to_string(i));
    out.dataset.labels = out.labels;
    for (Index k = 0; k < K; ++k) out.dataset.label_names.push_back("topic_" + std::to_string(k));

    out.signature_genes.resize(static_cast<std::size_t>(K));
    for (Index k = 0; k < K; ++k)
        for (Index m = k * block; m < (k + 1) * block; ++m)
            out.signature_genes[static_cast<std::size_t>(k)].push_back(
                out.dataset.gene_names[static_cast<std::size_t>(m)]);
    return out;
}

} // namespace sctopic
