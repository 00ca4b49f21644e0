#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "sctopic/matrix.hpp"

// Reverse-mode tape over Matrix values. Graphs are built per evaluation by
// the op functions below; Var::backward() runs the recorded closures in
// reverse topological order. Parameter leaves outlive the graphs built on
// them, so an optimizer can read grads and update values in place.
namespace sctopic::ad {

struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop; // scatter node.grad into parents

    void ensure_grad() {
        if (!grad_ready) {
            grad = Matrix::Zero(value.rows(), value.cols());
            grad_ready = true;
        }
    }
    void accumulate(const Matrix& g) {
        ensure_grad();
        grad += g;
    }
};

class Var {
public:
    Var() = default;

    static Var constant(Matrix v) {
        auto n = std::make_shared<Node>();
        n->value = std::move(v);
        return Var(std::move(n));
    }

    static Var scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

    static Var parameter(Matrix v) {
        auto n = std::make_shared<Node>();
        n->value = std::move(v);
        n->requires_grad = true;
        return Var(std::move(n));
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Matrix& value() const { return n_->value; }
    Matrix& mutable_value() { return n_->value; } // leaf updates between steps
    const Matrix& grad() const {
        if (!n_->grad_ready) throw std::logic_error("Var::grad: no gradient computed");
        return n_->grad;
    }
    bool requires_grad() const { return n_->requires_grad; }
    Index rows() const { return n_->value.rows(); }
    Index cols() const { return n_->value.cols(); }
    double item() const {
        if (rows() != 1 || cols() != 1) throw std::logic_error("Var::item: not a scalar");
        return n_->value(0, 0);
    }

    // Seed d(this)/d(this) = 1 and propagate. Grads of everything reachable
    // are reset first, so grad() afterwards is exactly dL/dp for this loss.
    void backward() const {
        if (rows() != 1 || cols() != 1) throw std::logic_error("Var::backward: loss must be scalar");
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        topo(n_.get(), seen, order);
        for (Node* node : order) {
            node->grad = Matrix::Zero(node->value.rows(), node->value.cols());
            node->grad_ready = true;
        }
        n_->ensure_grad();
        n_->grad(0, 0) = 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backprop) (*it)->backprop(**it);
        }
    }

    std::shared_ptr<Node> node() const { return n_; }

private:
    explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}
    std::shared_ptr<Node> n_;

    static void topo(Node* node, std::unordered_set<Node*>& seen, std::vector<Node*>& order) {
        if (!node->requires_grad || seen.count(node)) return;
        seen.insert(node);
        // iterative DFS, post-order
        struct Frame { Node* n; std::size_t next; };
        std::vector<Frame> stack{{node, 0}};
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next < f.n->parents.size()) {
                Node* p = f.n->parents[f.next++].get();
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(f.n);
                stack.pop_back();
            }
        }
    }

    friend Var make_op(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backprop);
};

inline Var make_op(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const Var& p : parents) {
        if (p.node()->requires_grad) n->requires_grad = true;
    }
    if (n->requires_grad) {
        n->parents.reserve(parents.size());
        for (const Var& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return Var(std::move(n));
}

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

inline Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    return make_op(a.value() + b.value(), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) n.parents[1]->accumulate(n.grad);
    });
}

inline Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    return make_op(a.value() - b.value(), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) n.parents[1]->accumulate(-n.grad);
    });
}

// elementwise product
inline Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    return make_op(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad.cwiseProduct(n.parents[1]->value));
        if (n.parents[1]->requires_grad) n.parents[1]->accumulate(n.grad.cwiseProduct(n.parents[0]->value));
    });
}

inline Var scale(const Var& a, double s) {
    return make_op(a.value() * s, {a}, [s](Node& n) {
        n.parents[0]->accumulate(n.grad * s);
    });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var add_scalar(const Var& a, double s) {
    return make_op((a.value().array() + s).matrix(), {a}, [](Node& n) {
        n.parents[0]->accumulate(n.grad);
    });
}

// a (n x m) + b (1 x m), broadcast over rows
inline Var add_rowvec(const Var& a, const Var& b) {
    if (b.rows() != 1 || a.cols() != b.cols())
        throw std::invalid_argument("add_rowvec: b must be 1 x a.cols()");
    Matrix out = a.value();
    out.rowwise() += b.value().row(0);
    return make_op(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) n.parents[1]->accumulate(n.grad.colwise().sum());
    });
}

inline Var matmul(const Var& a, const Var& b) {
    return make_op(sctopic::matmul(a.value(), b.value()), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad * n.parents[1]->value.transpose());
        if (n.parents[1]->requires_grad) n.parents[1]->accumulate(n.parents[0]->value.transpose() * n.grad);
    });
}

inline Var transpose(const Var& a) {
    return make_op(a.value().transpose(), {a}, [](Node& n) {
        n.parents[0]->accumulate(n.grad.transpose());
    });
}

inline Var exp(const Var& a) {
    Matrix y = a.value().array().exp().matrix();
    return make_op(y, {a}, [y](Node& n) {
        n.parents[0]->accumulate(n.grad.cwiseProduct(y));
    });
}

inline Var log(const Var& a) {
    return make_op(a.value().array().log().matrix(), {a}, [](Node& n) {
        n.parents[0]->accumulate(n.grad.cwiseQuotient(n.parents[0]->value));
    });
}

inline Var tanh(const Var& a) {
    Matrix y = a.value().array().tanh().matrix();
    return make_op(y, {a}, [y](Node& n) {
        n.parents[0]->accumulate(n.grad.cwiseProduct((1.0 - y.array().square()).matrix()));
    });
}

inline Var square(const Var& a) {
    return make_op(a.value().array().square().matrix(), {a}, [](Node& n) {
        n.parents[0]->accumulate(2.0 * n.grad.cwiseProduct(n.parents[0]->value));
    });
}

inline Var sum(const Var& a) {
    return make_op(Matrix::Constant(1, 1, a.value().sum()), {a}, [](Node& n) {
        n.parents[0]->accumulate(Matrix::Constant(n.parents[0]->value.rows(),
                                                  n.parents[0]->value.cols(), n.grad(0, 0)));
    });
}

// sum of x*log(x) over all entries, with 0*log(0) := 0; scalar result
inline Var xlogx_sum(const Var& a) {
    double total = 0.0;
    const Matrix& x = a.value();
    for (Index i = 0; i < x.rows(); ++i)
        for (Index j = 0; j < x.cols(); ++j)
            if (x(i, j) > 0.0) total += x(i, j) * std::log(x(i, j));
    return make_op(Matrix::Constant(1, 1, total), {a}, [](Node& n) {
        const Matrix& v = n.parents[0]->value;
        Matrix g(v.rows(), v.cols());
        for (Index i = 0; i < v.rows(); ++i)
            for (Index j = 0; j < v.cols(); ++j)
                g(i, j) = v(i, j) > 0.0 ? (std::log(v(i, j)) + 1.0) * n.grad(0, 0) : 0.0;
        n.parents[0]->accumulate(g);
    });
}

inline Var softmax_rows(const Var& a) {
    Matrix y = sctopic::softmax_rows(a.value());
    return make_op(y, {a}, [y](Node& n) {
        Matrix g(y.rows(), y.cols());
        for (Index i = 0; i < y.rows(); ++i) {
            const double dot = n.grad.row(i).dot(y.row(i));
            g.row(i) = y.row(i).cwiseProduct((n.grad.row(i).array() - dot).matrix());
        }
        n.parents[0]->accumulate(g);
    });
}

inline Var log_softmax_rows(const Var& a) {
    Matrix y = sctopic::log_softmax_rows(a.value());
    return make_op(y, {a}, [y](Node& n) {
        Matrix g(y.rows(), y.cols());
        for (Index i = 0; i < y.rows(); ++i) {
            const double usum = n.grad.row(i).sum();
            g.row(i) = n.grad.row(i) - usum * y.row(i).array().exp().matrix();
        }
        n.parents[0]->accumulate(g);
    });
}

// per-row log-sum-exp, result n x 1
inline Var log_sum_exp_rows(const Var& a) {
    Vector lse = sctopic::log_sum_exp_rows(a.value());
    Matrix out(a.rows(), 1);
    out.col(0) = lse;
    return make_op(std::move(out), {a}, [](Node& n) {
        const Matrix sm = sctopic::softmax_rows(n.parents[0]->value);
        Matrix g(sm.rows(), sm.cols());
        for (Index i = 0; i < sm.rows(); ++i) g.row(i) = sm.row(i) * n.grad(i, 0);
        n.parents[0]->accumulate(g);
    });
}

inline Var l2_normalize_rows(const Var& a) {
    Matrix y(a.rows(), a.cols());
    Vector norms(a.rows());
    for (Index i = 0; i < a.rows(); ++i) {
        norms(i) = a.value().row(i).norm();
        if (norms(i) == 0.0) throw NumericError("l2_normalize_rows: zero-norm row");
        y.row(i) = a.value().row(i) / norms(i);
    }
    return make_op(y, {a}, [y, norms](Node& n) {
        Matrix g(y.rows(), y.cols());
        for (Index i = 0; i < y.rows(); ++i) {
            const double dot = n.grad.row(i).dot(y.row(i));
            g.row(i) = (n.grad.row(i) - dot * y.row(i)) / norms(i);
        }
        n.parents[0]->accumulate(g);
    });
}

inline Var concat_cols(const Var& a, const Var& b) {
    if (a.rows() != b.rows()) throw std::invalid_argument("concat_cols: row counts differ");
    Matrix out(a.rows(), a.cols() + b.cols());
    out.leftCols(a.cols()) = a.value();
    out.rightCols(b.cols()) = b.value();
    return make_op(std::move(out), {a, b}, [](Node& n) {
        const Index ca = n.parents[0]->value.cols();
        const Index cb = n.parents[1]->value.cols();
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad.leftCols(ca));
        if (n.parents[1]->requires_grad) n.parents[1]->accumulate(n.grad.rightCols(cb));
    });
}

// diagonal of a square matrix as an n x 1 column
inline Var diag_as_col(const Var& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("diag_as_col: matrix not square");
    Matrix out(a.rows(), 1);
    for (Index i = 0; i < a.rows(); ++i) out(i, 0) = a.value()(i, i);
    return make_op(std::move(out), {a}, [](Node& n) {
        Matrix g = Matrix::Zero(n.parents[0]->value.rows(), n.parents[0]->value.cols());
        for (Index i = 0; i < g.rows(); ++i) g(i, i) = n.grad(i, 0);
        n.parents[0]->accumulate(g);
    });
}

// C_mk = ||a_m - b_k||^2 over rows; gradients flow to both embeddings
inline Var pairwise_sq_dists(const Var& a, const Var& b) {
    return make_op(sctopic::pairwise_sq_dists(a.value(), b.value()), {a, b}, [](Node& n) {
        const Matrix& A = n.parents[0]->value;
        const Matrix& B = n.parents[1]->value;
        const Matrix& U = n.grad;
        if (n.parents[0]->requires_grad) {
            Matrix dA = 2.0 * (U.rowwise().sum().asDiagonal() * A - U * B);
            n.parents[0]->accumulate(dA);
        }
        if (n.parents[1]->requires_grad) {
            Matrix dB = 2.0 * (U.colwise().sum().asDiagonal() * B - U.transpose() * A);
            n.parents[1]->accumulate(dB);
        }
    });
}

// Max over all parameter entries of |analytic - numeric| /
// max(1e-8, |analytic| + |numeric|), numeric by central differences.
// `loss_builder` must rebuild the loss graph from the given leaves.
inline double grad_check(const std::function<Var()>& loss_builder,
                         std::vector<Var>& params, double step = 1e-5) {
    Var loss = loss_builder();
    if (!std::isfinite(loss.item())) throw NumericError("grad_check: loss is non-finite");
    loss.backward();
    std::vector<Matrix> analytic;
    analytic.reserve(params.size());
    for (const Var& p : params) {
        // a parameter the loss never touches has gradient zero
        analytic.push_back(p.node()->grad_ready ? p.grad()
                                                : Matrix::Zero(p.rows(), p.cols()));
    }

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Matrix& v = params[pi].mutable_value();
        for (Index i = 0; i < v.rows(); ++i) {
            for (Index j = 0; j < v.cols(); ++j) {
                const double orig = v(i, j);
                v(i, j) = orig + step;
                const double up = loss_builder().item();
                v(i, j) = orig - step;
                const double down = loss_builder().item();
                v(i, j) = orig;
                const double numeric = (up - down) / (2.0 * step);
                const double a = analytic[pi](i, j);
                const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
                worst = std::max(worst, rel);
            }
        }
    }
    return worst;
}

} // namespace sctopic::ad
