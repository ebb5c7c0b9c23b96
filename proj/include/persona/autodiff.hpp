#pragma once

// Minimal tape-based reverse-mode differentiation over dense Eigen matrices. Every forward
// op records a closure that pushes the output gradient back to its inputs; `backward`
// replays the tape in reverse and deposits parameter gradients into a ParameterSet.

#include <Eigen/Dense>

#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace persona::ad {

using Matrix = Eigen::MatrixXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Named trainable tensors with matching gradient buffers. Iteration order is insertion
/// order, which keeps serialization and optimizer state stable.
class ParameterSet {
  public:
    Matrix& add(const std::string& name, Matrix init)
    {
        auto [it, inserted] = m_entries.try_emplace(name);
        if (!inserted) {
            throw std::logic_error("duplicate parameter " + name);
        }
        it->second.grad = Matrix::Zero(init.rows(), init.cols());
        it->second.value = std::move(init);
        m_order.push_back(name);
        return it->second.value;
    }

    bool contains(const std::string& name) const { return m_entries.count(name) > 0; }

    Matrix& value(const std::string& name) { return entry(name).value; }
    const Matrix& value(const std::string& name) const { return entry(name).value; }
    Matrix& grad(const std::string& name) { return entry(name).grad; }
    const Matrix& grad(const std::string& name) const { return entry(name).grad; }

    const std::vector<std::string>& names() const noexcept { return m_order; }

    void zero_grad()
    {
        for (auto& [_, e] : m_entries) {
            e.grad.setZero();
        }
    }

    std::size_t count() const
    {
        std::size_t n = 0;
        for (const auto& [_, e] : m_entries) {
            n += static_cast<std::size_t>(e.value.size());
        }
        return n;
    }

  private:
    struct Entry {
        Matrix value;
        Matrix grad;
    };

    Entry& entry(const std::string& name)
    {
        auto it = m_entries.find(name);
        if (it == m_entries.end()) {
            throw std::out_of_range("unknown parameter " + name);
        }
        return it->second;
    }
    const Entry& entry(const std::string& name) const
    {
        return const_cast<ParameterSet*>(this)->entry(name);
    }

    std::map<std::string, Entry> m_entries;
    std::vector<std::string> m_order;
};

struct Var {
    std::size_t id = 0;
};

class Tape {
  public:
    explicit Tape(ParameterSet* params = nullptr) : m_params(params) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value) { return push(std::move(value), false, nullptr); }

    Var scalar_constant(double v) { return constant(Matrix::Constant(1, 1, v)); }

    /// Leaf bound to a named parameter; repeated calls return the same node.
    Var param(const std::string& name)
    {
        if (!m_params) {
            throw std::logic_error("tape has no parameter set");
        }
        auto it = m_param_nodes.find(name);
        if (it != m_param_nodes.end()) {
            return it->second;
        }
        Var v = push(m_params->value(name), true, nullptr);
        m_param_nodes.emplace(name, v);
        return v;
    }

    const Matrix& value(Var v) const { return m_nodes[v.id].value; }
    double item(Var v) const
    {
        assert(value(v).size() == 1);
        return value(v)(0, 0);
    }
    bool requires_grad(Var v) const { return m_nodes[v.id].requires_grad; }
    std::size_t size() const noexcept { return m_nodes.size(); }

    /// Gradient of a node after backward(); zero-sized when the node got no gradient.
    const Matrix& gradient(Var v) const { return m_nodes[v.id].grad; }

    /// Reverse sweep from a 1x1 node; parameter gradients are accumulated (+=) into the
    /// bound ParameterSet.
    void backward(Var loss)
    {
        if (value(loss).size() != 1) {
            throw std::logic_error("backward needs a scalar");
        }
        grad(loss.id) = Matrix::Ones(1, 1);
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            auto& n = m_nodes[i];
            if (n.grad.size() == 0 || !n.requires_grad || !n.back) {
                continue;
            }
            n.back(*this, i);
        }
        if (m_params) {
            for (const auto& [name, v] : m_param_nodes) {
                const auto& g = m_nodes[v.id].grad;
                if (g.size() != 0) {
                    m_params->grad(name) += g;
                }
            }
        }
    }

    // ---- elementwise / linear ---------------------------------------------------------

    Var matmul(Var a, Var b)
    {
        return push(value(a) * value(b), rg(a, b), [a, b](Tape& t, std::size_t o) {
            const Matrix& g = t.m_nodes[o].grad;
            if (t.requires_grad(a)) {
                t.grad(a.id).noalias() += g * t.value(b).transpose();
            }
            if (t.requires_grad(b)) {
                t.grad(b.id).noalias() += t.value(a).transpose() * g;
            }
        });
    }

    /// a * b^T
    Var matmul_nt(Var a, Var b)
    {
        return push(value(a) * value(b).transpose(), rg(a, b), [a, b](Tape& t, std::size_t o) {
            const Matrix& g = t.m_nodes[o].grad;
            if (t.requires_grad(a)) {
                t.grad(a.id).noalias() += g * t.value(b);
            }
            if (t.requires_grad(b)) {
                t.grad(b.id).noalias() += g.transpose() * t.value(a);
            }
        });
    }

    Var add(Var a, Var b)
    {
        check_same(a, b, "add");
        return push(value(a) + value(b), rg(a, b), [a, b](Tape& t, std::size_t o) {
            const Matrix& g = t.m_nodes[o].grad;
            if (t.requires_grad(a)) {
                t.grad(a.id) += g;
            }
            if (t.requires_grad(b)) {
                t.grad(b.id) += g;
            }
        });
    }

    Var sub(Var a, Var b)
    {
        check_same(a, b, "sub");
        return push(value(a) - value(b), rg(a, b), [a, b](Tape& t, std::size_t o) {
            const Matrix& g = t.m_nodes[o].grad;
            if (t.requires_grad(a)) {
                t.grad(a.id) += g;
            }
            if (t.requires_grad(b)) {
                t.grad(b.id) -= g;
            }
        });
    }

    /// Adds a 1 x cols row vector to every row of a.
    Var add_row(Var a, Var row)
    {
        if (value(row).rows() != 1 || value(row).cols() != value(a).cols()) {
            throw std::logic_error("add_row: shape mismatch");
        }
        Matrix out = value(a);
        out.rowwise() += value(row).row(0);
        return push(std::move(out), rg(a, row), [a, row](Tape& t, std::size_t o) {
            const Matrix& g = t.m_nodes[o].grad;
            if (t.requires_grad(a)) {
                t.grad(a.id) += g;
            }
            if (t.requires_grad(row)) {
                t.grad(row.id) += g.colwise().sum();
            }
        });
    }

    Var scale(Var a, double s)
    {
        return push(value(a) * s, rg(a), [a, s](Tape& t, std::size_t o) {
            t.grad(a.id) += t.m_nodes[o].grad * s;
        });
    }

    /// a multiplied by the 1x1 node s.
    Var scale_by(Var a, Var s)
    {
        if (value(s).size() != 1) {
            throw std::logic_error("scale_by: scale must be 1x1");
        }
        return push(value(a) * item(s), rg(a, s), [a, s](Tape& t, std::size_t o) {
            const Matrix& g = t.m_nodes[o].grad;
            if (t.requires_grad(a)) {
                t.grad(a.id) += g * t.item(s);
            }
            if (t.requires_grad(s)) {
                t.grad(s.id)(0, 0) += (g.array() * t.value(a).array()).sum();
            }
        });
    }

    Var hadamard(Var a, Var b)
    {
        check_same(a, b, "hadamard");
        return push(value(a).cwiseProduct(value(b)), rg(a, b), [a, b](Tape& t, std::size_t o) {
            const Matrix& g = t.m_nodes[o].grad;
            if (t.requires_grad(a)) {
                t.grad(a.id) += g.cwiseProduct(t.value(b));
            }
            if (t.requires_grad(b)) {
                t.grad(b.id) += g.cwiseProduct(t.value(a));
            }
        });
    }

    Var abs(Var a)
    {
        return push(value(a).cwiseAbs(), rg(a), [a](Tape& t, std::size_t o) {
            Matrix sign = t.value(a).unaryExpr([](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
            t.grad(a.id) += t.m_nodes[o].grad.cwiseProduct(sign);
        });
    }

    Var tanh(Var a)
    {
        Matrix y = value(a).array().tanh().matrix();
        return push(y, rg(a), [a](Tape& t, std::size_t o) {
            const Matrix& y = t.m_nodes[o].value;
            t.grad(a.id) += t.m_nodes[o].grad.cwiseProduct((1.0 - y.array().square()).matrix());
        });
    }

    Var sigmoid(Var a)
    {
        Matrix y = value(a).unaryExpr([](double x) { return stable_sigmoid(x); });
        return push(y, rg(a), [a](Tape& t, std::size_t o) {
            const Matrix& y = t.m_nodes[o].value;
            t.grad(a.id) += t.m_nodes[o].grad.cwiseProduct((y.array() * (1.0 - y.array())).matrix());
        });
    }

    /// GELU, tanh approximation (smooth everywhere, which finite-difference checks need).
    Var gelu(Var a)
    {
        constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
        Matrix y = value(a).unaryExpr([](double x) {
            return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
        });
        return push(y, rg(a), [a](Tape& t, std::size_t o) {
            Matrix d = t.value(a).unaryExpr([](double x) {
                double u = c * (x + 0.044715 * x * x * x);
                double th = std::tanh(u);
                double du = c * (1.0 + 3.0 * 0.044715 * x * x);
                return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
            });
            t.grad(a.id) += t.m_nodes[o].grad.cwiseProduct(d);
        });
    }

    // ---- structural -------------------------------------------------------------------

    Var rows(Var a, std::size_t begin, std::size_t count)
    {
        if (begin + count > static_cast<std::size_t>(value(a).rows())) {
            throw std::logic_error("rows: range out of bounds");
        }
        Matrix out = value(a).middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count));
        return push(std::move(out), rg(a), [a, begin, count](Tape& t, std::size_t o) {
            t.grad(a.id).middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count)) +=
                t.m_nodes[o].grad;
        });
    }

    Var vstack(const std::vector<Var>& parts)
    {
        if (parts.empty()) {
            throw std::logic_error("vstack of nothing");
        }
        if (parts.size() == 1) {
            return parts.front();
        }
        Eigen::Index cols = value(parts[0]).cols();
        Eigen::Index total = 0;
        bool any = false;
        for (auto p : parts) {
            if (value(p).cols() != cols) {
                throw std::logic_error("vstack: column mismatch");
            }
            total += value(p).rows();
            any = any || requires_grad(p);
        }
        Matrix out(total, cols);
        Eigen::Index r = 0;
        for (auto p : parts) {
            out.middleRows(r, value(p).rows()) = value(p);
            r += value(p).rows();
        }
        return push(std::move(out), any, [parts](Tape& t, std::size_t o) {
            Eigen::Index r = 0;
            for (auto p : parts) {
                auto n = t.value(p).rows();
                if (t.requires_grad(p)) {
                    t.grad(p.id) += t.m_nodes[o].grad.middleRows(r, n);
                }
                r += n;
            }
        });
    }

    Var hstack(const std::vector<Var>& parts)
    {
        if (parts.empty()) {
            throw std::logic_error("hstack of nothing");
        }
        Eigen::Index rows_ = value(parts[0]).rows();
        Eigen::Index total = 0;
        bool any = false;
        for (auto p : parts) {
            if (value(p).rows() != rows_) {
                throw std::logic_error("hstack: row mismatch");
            }
            total += value(p).cols();
            any = any || requires_grad(p);
        }
        Matrix out(rows_, total);
        Eigen::Index c = 0;
        for (auto p : parts) {
            out.middleCols(c, value(p).cols()) = value(p);
            c += value(p).cols();
        }
        return push(std::move(out), any, [parts](Tape& t, std::size_t o) {
            Eigen::Index c = 0;
            for (auto p : parts) {
                auto n = t.value(p).cols();
                if (t.requires_grad(p)) {
                    t.grad(p.id) += t.m_nodes[o].grad.middleCols(c, n);
                }
                c += n;
            }
        });
    }

    /// Row lookup into an embedding table.
    Var gather_rows(Var table, const std::vector<int>& ids)
    {
        const Matrix& tv = value(table);
        Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= tv.rows()) {
                throw std::out_of_range("gather_rows: id out of range");
            }
            out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
        }
        return push(std::move(out), rg(table), [table, ids](Tape& t, std::size_t o) {
            const Matrix& g = t.m_nodes[o].grad;
            Matrix& gt = t.grad(table.id);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                gt.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
            }
        });
    }

    Var mean_rows(Var a)
    {
        auto n = value(a).rows();
        if (n == 0) {
            throw std::logic_error("mean_rows of empty matrix");
        }
        Matrix out = value(a).colwise().mean();
        return push(std::move(out), rg(a), [a, n](Tape& t, std::size_t o) {
            t.grad(a.id).rowwise() += t.m_nodes[o].grad.row(0) / static_cast<double>(n);
        });
    }

    Var sum(Var a)
    {
        return push(Matrix::Constant(1, 1, value(a).sum()), rg(a), [a](Tape& t, std::size_t o) {
            t.grad(a.id).array() += t.m_nodes[o].grad(0, 0);
        });
    }

    Var add_n(const std::vector<Var>& terms)
    {
        if (terms.empty()) {
            throw std::logic_error("add_n of nothing");
        }
        Matrix out = value(terms[0]);
        bool any = requires_grad(terms[0]);
        for (std::size_t i = 1; i < terms.size(); ++i) {
            check_same(terms[0], terms[i], "add_n");
            out += value(terms[i]);
            any = any || requires_grad(terms[i]);
        }
        return push(std::move(out), any, [terms](Tape& t, std::size_t o) {
            for (auto v : terms) {
                if (t.requires_grad(v)) {
                    t.grad(v.id) += t.m_nodes[o].grad;
                }
            }
        });
    }

    /// Same value, no gradient flow.
    Var detach(Var a) { return constant(value(a)); }

    // ---- fused layers -----------------------------------------------------------------

    /// Row-wise layer normalisation with learned gain and bias (both 1 x cols).
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5)
    {
        const Matrix& xv = value(x);
        const auto cols = xv.cols();
        Matrix xhat(xv.rows(), cols);
        Eigen::VectorXd inv_std(xv.rows());
        for (Eigen::Index r = 0; r < xv.rows(); ++r) {
            double mu = xv.row(r).mean();
            double var = (xv.row(r).array() - mu).square().mean();
            inv_std(r) = 1.0 / std::sqrt(var + eps);
            xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
        }
        Matrix out = xhat;
        out.array().rowwise() *= value(gain).row(0).array();
        out.rowwise() += value(bias).row(0);
        auto saved = std::make_shared<std::pair<Matrix, Eigen::VectorXd>>(std::move(xhat), std::move(inv_std));
        return push(std::move(out), rg(x, gain, bias), [x, gain, bias, saved](Tape& t, std::size_t o) {
            const Matrix& g = t.m_nodes[o].grad;
            const Matrix& xhat = saved->first;
            const Eigen::VectorXd& inv_std = saved->second;
            if (t.requires_grad(gain)) {
                t.grad(gain.id) += (g.array() * xhat.array()).colwise().sum().matrix();
            }
            if (t.requires_grad(bias)) {
                t.grad(bias.id) += g.colwise().sum();
            }
            if (t.requires_grad(x)) {
                Matrix dxhat = g;
                dxhat.array().rowwise() *= t.value(gain).row(0).array();
                Matrix& gx = t.grad(x.id);
                for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                    double m1 = dxhat.row(r).mean();
                    double m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
                    gx.row(r).array() +=
                        inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                }
            }
        });
    }

    /// Scaled dot-product attention over `heads` column blocks. `mask(i, j)` true means
    /// query row i may attend to key row j; a row with no admissible key yields zeros.
    Var attention(Var q, Var k, Var v, int heads, const Mask* mask = nullptr)
    {
        const Matrix& qv = value(q);
        const Matrix& kv = value(k);
        const Matrix& vv = value(v);
        const auto n = qv.rows();
        const auto m = kv.rows();
        const auto d = qv.cols();
        if (kv.cols() != d || vv.cols() != d || vv.rows() != m || d % heads != 0) {
            throw std::logic_error("attention: shape mismatch");
        }
        if (mask && (mask->rows() != n || mask->cols() != m)) {
            throw std::logic_error("attention: mask shape mismatch");
        }
        const auto dk = d / heads;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
        auto probs = std::make_shared<std::vector<Matrix>>();
        probs->reserve(static_cast<std::size_t>(heads));
        Matrix out(n, d);
        for (int h = 0; h < heads; ++h) {
            auto c0 = static_cast<Eigen::Index>(h) * dk;
            Matrix s = qv.middleCols(c0, dk) * kv.middleCols(c0, dk).transpose() * inv_sqrt;
            Matrix p(n, m);
            for (Eigen::Index i = 0; i < n; ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (Eigen::Index j = 0; j < m; ++j) {
                    if (!mask || (*mask)(i, j)) {
                        mx = std::max(mx, s(i, j));
                    }
                }
                double z = 0.0;
                for (Eigen::Index j = 0; j < m; ++j) {
                    double e = (!mask || (*mask)(i, j)) ? std::exp(s(i, j) - mx) : 0.0;
                    p(i, j) = e;
                    z += e;
                }
                if (z > 0.0) {
                    p.row(i) /= z;
                }
            }
            out.middleCols(c0, dk).noalias() = p * vv.middleCols(c0, dk);
            probs->push_back(std::move(p));
        }
        return push(std::move(out), rg(q, k, v), [q, k, v, heads, dk, inv_sqrt, probs](Tape& t, std::size_t o) {
            const Matrix& g = t.m_nodes[o].grad;
            const Matrix& qv = t.value(q);
            const Matrix& kv = t.value(k);
            const Matrix& vv = t.value(v);
            for (int h = 0; h < heads; ++h) {
                auto c0 = static_cast<Eigen::Index>(h) * dk;
                const Matrix& p = (*probs)[static_cast<std::size_t>(h)];
                Matrix go = g.middleCols(c0, dk);
                if (t.requires_grad(v)) {
                    t.grad(v.id).middleCols(c0, dk).noalias() += p.transpose() * go;
                }
                Matrix dp = go * vv.middleCols(c0, dk).transpose();
                Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
                Matrix ds = (p.array() * (dp.array().colwise() - rowdot.array())).matrix() * inv_sqrt;
                if (t.requires_grad(q)) {
                    t.grad(q.id).middleCols(c0, dk).noalias() += ds * kv.middleCols(c0, dk);
                }
                if (t.requires_grad(k)) {
                    t.grad(k.id).middleCols(c0, dk).noalias() += ds.transpose() * qv.middleCols(c0, dk);
                }
            }
        });
    }

    // ---- losses -----------------------------------------------------------------------

    /// Sum over rows of -log softmax(logits row)[target]. Returns 1x1.
    Var cross_entropy(Var logits, const std::vector<int>& targets)
    {
        const Matrix& lv = value(logits);
        if (static_cast<std::size_t>(lv.rows()) != targets.size()) {
            throw std::logic_error("cross_entropy: one target per row");
        }
        auto probs = std::make_shared<Matrix>(lv.rows(), lv.cols());
        double loss = 0.0;
        for (Eigen::Index r = 0; r < lv.rows(); ++r) {
            double mx = lv.row(r).maxCoeff();
            Eigen::RowVectorXd e = (lv.row(r).array() - mx).exp().matrix();
            double z = e.sum();
            probs->row(r) = e / z;
            loss -= lv(r, targets[static_cast<std::size_t>(r)]) - mx - std::log(z);
        }
        return push(Matrix::Constant(1, 1, loss), rg(logits), [logits, targets, probs](Tape& t, std::size_t o) {
            double g = t.m_nodes[o].grad(0, 0);
            Matrix d = *probs;
            for (std::size_t r = 0; r < targets.size(); ++r) {
                d(static_cast<Eigen::Index>(r), targets[r]) -= 1.0;
            }
            t.grad(logits.id) += d * g;
        });
    }

    /// Binary cross-entropy of sigmoid(z) against `label`, evaluated from the logit for
    /// numerical stability. z is 1x1.
    Var bce_with_logits(Var z, double label)
    {
        double x = item(z);
        double loss = std::max(x, 0.0) - x * label + std::log1p(std::exp(-std::abs(x)));
        return push(Matrix::Constant(1, 1, loss), rg(z), [z, label](Tape& t, std::size_t o) {
            t.grad(z.id)(0, 0) += t.m_nodes[o].grad(0, 0) * (stable_sigmoid(t.item(z)) - label);
        });
    }

    /// Cosine similarity of two 1 x d rows. Returns 1x1.
    Var cosine(Var a, Var b)
    {
        check_same(a, b, "cosine");
        const Matrix& av = value(a);
        const Matrix& bv = value(b);
        double na = std::sqrt(av.squaredNorm()) + 1e-12;
        double nb = std::sqrt(bv.squaredNorm()) + 1e-12;
        double dot = (av.array() * bv.array()).sum();
        double c = dot / (na * nb);
        return push(Matrix::Constant(1, 1, c), rg(a, b), [a, b, na, nb, c](Tape& t, std::size_t o) {
            double g = t.m_nodes[o].grad(0, 0);
            const Matrix& av = t.value(a);
            const Matrix& bv = t.value(b);
            if (t.requires_grad(a)) {
                t.grad(a.id) += g * (bv / (na * nb) - c * av / (na * na));
            }
            if (t.requires_grad(b)) {
                t.grad(b.id) += g * (av / (na * nb) - c * bv / (nb * nb));
            }
        });
    }

    static double stable_sigmoid(double x)
    {
        if (x >= 0) {
            return 1.0 / (1.0 + std::exp(-x));
        }
        double e = std::exp(x);
        return e / (1.0 + e);
    }

  private:
    using Back = std::function<void(Tape&, std::size_t)>;

    struct Node {
        Matrix value;
        Matrix grad;
        Back back;
        bool requires_grad = false;
    };

    Var push(Matrix value, bool requires_grad, Back back)
    {
        m_nodes.push_back({std::move(value), Matrix{}, requires_grad ? std::move(back) : Back{}, requires_grad});
        return Var{m_nodes.size() - 1};
    }

    Matrix& grad(std::size_t id)
    {
        auto& n = m_nodes[id];
        if (n.grad.size() == 0) {
            n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
        }
        return n.grad;
    }

    template <typename... Vs>
    bool rg(Vs... vs) const
    {
        return (requires_grad(vs) || ...);
    }

    void check_same(Var a, Var b, const char* op) const
    {
        if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
            throw std::logic_error(std::string(op) + ": shape mismatch");
        }
    }

    ParameterSet* m_params;
    std::vector<Node> m_nodes;
    std::unordered_map<std::string, Var> m_param_nodes;
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // <= 0 disables clipping
};

/// Adaptive-moment optimizer with global gradient-norm clipping.
class Adam {
  public:
    using Options = AdamOptions;

    explicit Adam(Options opts = {}) : m_opts(opts) {}

    /// Applies one update from the accumulated gradients; returns the pre-clip norm.
    double step(ParameterSet& params)
    {
        double sq = 0.0;
        for (const auto& name : params.names()) {
            sq += params.grad(name).squaredNorm();
        }
        double norm = std::sqrt(sq);
        double factor = (m_opts.clip_norm > 0.0 && norm > m_opts.clip_norm) ? m_opts.clip_norm / norm : 1.0;
        ++m_t;
        double bc1 = 1.0 - std::pow(m_opts.beta1, static_cast<double>(m_t));
        double bc2 = 1.0 - std::pow(m_opts.beta2, static_cast<double>(m_t));
        for (const auto& name : params.names()) {
            Matrix g = params.grad(name) * factor;
            auto [it, _] = m_state.try_emplace(name, Moments{Matrix::Zero(g.rows(), g.cols()),
                                                             Matrix::Zero(g.rows(), g.cols())});
            auto& s = it->second;
            s.m = m_opts.beta1 * s.m + (1.0 - m_opts.beta1) * g;
            s.v = m_opts.beta2 * s.v + (1.0 - m_opts.beta2) * g.cwiseProduct(g);
            params.value(name).array() -=
                m_opts.lr * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + m_opts.eps);
        }
        return norm;
    }

  private:
    struct Moments {
        Matrix m;
        Matrix v;
    };
    Options m_opts;
    std::size_t m_t = 0;
    std::map<std::string, Moments> m_state;
};

/// Uniform Glorot initialisation.
inline Matrix glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng)
{
    double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            m(r, c) = dist(rng);
        }
    }
    return m;
}

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng)
{
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            m(r, c) = dist(rng);
        }
    }
    return m;
}

}  // namespace persona::ad
