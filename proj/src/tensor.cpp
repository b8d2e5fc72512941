#include "emae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "emae/errors.hpp"

namespace emae {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

const Shape& Tensor::shape() const { return graph->node_shape(node); }
const Values& Tensor::values() const { return graph->node_values(node); }
int64_t Tensor::numel() const { return shape_numel(shape()); }
double Tensor::value(int64_t i) const { return values()[i]; }

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() on non-scalar tensor of shape " + shape_str(shape()));
    }
    return value(0);
}

bool Tensor::requires_grad() const { return graph->node_requires_grad(node); }
const Values& Tensor::grad() const { return graph->grad(*this); }

Tensor Graph::record(Shape shape, ValuesPtr values, bool requires_grad,
                     std::function<void(Graph&, int)> backward_fn) {
    if (backward_done_) {
        throw ConfigError("graph already ran backward; recording further ops is not supported");
    }
    int64_t n = shape_numel(shape);
    if (n <= 0) {
        throw ShapeError("empty tensor shape " + shape_str(shape));
    }
    if (static_cast<int64_t>(values->size()) != n) {
        throw ShapeError("values length " + std::to_string(values->size()) +
                         " does not match shape " + shape_str(shape));
    }
    Node nd;
    nd.shape = std::move(shape);
    nd.values = std::move(values);
    nd.requires_grad = requires_grad;
    if (requires_grad) nd.backward_fn = std::move(backward_fn);
    nodes_.push_back(std::move(nd));
    return Tensor{this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::check_same_graph(const Tensor& t) const {
    if (t.graph != this || t.node < 0 || t.node >= static_cast<int>(nodes_.size())) {
        throw ConfigError("tensor does not belong to this graph");
    }
}

Tensor Graph::param(const Shape& shape, ValuesPtr storage) {
    for (const auto& [ptr, id] : param_index_) {
        if (ptr == storage.get()) return Tensor{this, id};
    }
    Tensor t = record(shape, storage, true);
    param_index_.emplace_back(storage.get(), t.node);
    return t;
}

Tensor Graph::constant(const Shape& shape, ValuesPtr storage) {
    return record(shape, std::move(storage), false);
}

Tensor Graph::constant(const Shape& shape, Values values) {
    return constant(shape, std::make_shared<Values>(std::move(values)));
}

Tensor Graph::scalar(double v) { return constant({1}, Values{v}); }

void Graph::accumulate(int id, const Values& df) {
    Node& nd = nodes_[id];
    if (!nd.requires_grad) return;
    for (size_t i = 0; i < df.size(); ++i) nd.grad[i] += df[i];
}

void Graph::accumulate_at(int id, int64_t offset, double v) {
    Node& nd = nodes_[id];
    if (!nd.requires_grad) return;
    nd.grad[offset] += v;
}

namespace {

// True when small is a trailing suffix of big (row-major broadcast) or a
// scalar.
bool broadcast_ok(const Shape& big, const Shape& small) {
    if (shape_numel(small) == 1) return true;
    if (small.size() > big.size()) return false;
    size_t off = big.size() - small.size();
    for (size_t i = 0; i < small.size(); ++i) {
        if (big[off + i] != small[i]) return false;
    }
    return true;
}

template <typename Fwd, typename DA, typename DB>
Tensor binary_elementwise(Graph& g, const Tensor& a, const Tensor& b,
                          const char* opname, Fwd fwd, DA da, DB db) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (!broadcast_ok(sa, sb)) {
        throw ShapeError(std::string(opname) + ": shape mismatch " + shape_str(sa) +
                         " vs " + shape_str(sb) +
                         " (second operand must match, be a trailing suffix, or be scalar)");
    }
    const Values& va = a.values();
    const Values& vb = b.values();
    const int64_t na = static_cast<int64_t>(va.size());
    const int64_t nb = static_cast<int64_t>(vb.size());
    auto out = std::make_shared<Values>(na);
    for (int64_t i = 0; i < na; ++i) (*out)[i] = fwd(va[i], vb[i % nb]);

    bool rg = a.requires_grad() || b.requires_grad();
    int ia = a.node, ib = b.node;
    auto bwd = [ia, ib, nb, da, db](Graph& gg, int id) {
        const Values& go = gg.node_grad(id);
        const Values& va2 = gg.node_values(ia);
        const Values& vb2 = gg.node_values(ib);
        for (int64_t i = 0; i < static_cast<int64_t>(go.size()); ++i) {
            double ax = va2[i], bx = vb2[i % nb], gi = go[i];
            gg.accumulate_at(ia, i, da(ax, bx) * gi);
            gg.accumulate_at(ib, i % nb, db(ax, bx) * gi);
        }
    };
    return g.record(sa, out, rg, rg ? std::function<void(Graph&, int)>(bwd) : nullptr);
}

template <typename Fwd, typename Dx>
Tensor unary_elementwise(Graph& g, const Tensor& x, Fwd fwd, Dx dx) {
    const Values& v = x.values();
    auto out = std::make_shared<Values>(v.size());
    for (size_t i = 0; i < v.size(); ++i) (*out)[i] = fwd(v[i]);
    bool rg = x.requires_grad();
    int ix = x.node;
    auto bwd = [ix, dx](Graph& gg, int id) {
        const Values& go = gg.node_grad(id);
        const Values& vin = gg.node_values(ix);
        for (size_t i = 0; i < go.size(); ++i) {
            gg.accumulate_at(ix, static_cast<int64_t>(i), dx(vin[i]) * go[i]);
        }
    };
    return g.record(x.shape(), out, rg, rg ? std::function<void(Graph&, int)>(bwd) : nullptr);
}

}  // namespace

Tensor Graph::add(const Tensor& a, const Tensor& b) {
    check_same_graph(a);
    check_same_graph(b);
    return binary_elementwise(
        *this, a, b, "add", [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
    check_same_graph(a);
    check_same_graph(b);
    return binary_elementwise(
        *this, a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
    check_same_graph(a);
    check_same_graph(b);
    return binary_elementwise(
        *this, a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor Graph::scale(const Tensor& x, double c) { return mul(x, scalar(c)); }

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
    check_same_graph(a);
    check_same_graph(b);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " x " + shape_str(sb));
    }
    const int m = sa[0], k = sa[1], n = sb[1];
    const Values& va = a.values();
    const Values& vb = b.values();
    auto out = std::make_shared<Values>(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double aip = va[static_cast<size_t>(i) * k + p];
            const double* brow = &vb[static_cast<size_t>(p) * n];
            double* orow = &(*out)[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    bool rg = a.requires_grad() || b.requires_grad();
    int ia = a.node, ib = b.node;
    auto bwd = [ia, ib, m, k, n](Graph& gg, int id) {
        const Values& go = gg.node_grad(id);
        const Values& va2 = gg.node_values(ia);
        const Values& vb2 = gg.node_values(ib);
        if (gg.node_requires_grad(ia)) {  // dA = dC B^T
            for (int i = 0; i < m; ++i) {
                for (int p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j) {
                        acc += go[static_cast<size_t>(i) * n + j] * vb2[static_cast<size_t>(p) * n + j];
                    }
                    gg.accumulate_at(ia, static_cast<int64_t>(i) * k + p, acc);
                }
            }
        }
        if (gg.node_requires_grad(ib)) {  // dB = A^T dC
            for (int p = 0; p < k; ++p) {
                for (int j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < m; ++i) {
                        acc += va2[static_cast<size_t>(i) * k + p] * go[static_cast<size_t>(i) * n + j];
                    }
                    gg.accumulate_at(ib, static_cast<int64_t>(p) * n + j, acc);
                }
            }
        }
    };
    return record({m, n}, out, rg, rg ? std::function<void(Graph&, int)>(bwd) : nullptr);
}

Tensor Graph::transpose(const Tensor& x) {
    check_same_graph(x);
    const Shape& s = x.shape();
    if (s.size() != 2) {
        throw ShapeError("transpose expects a 2-d tensor, got " + shape_str(s));
    }
    const int r = s[0], c = s[1];
    const Values& v = x.values();
    auto out = std::make_shared<Values>(v.size());
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
            (*out)[static_cast<size_t>(j) * r + i] = v[static_cast<size_t>(i) * c + j];
        }
    }
    bool rg = x.requires_grad();
    int ix = x.node;
    auto bwd = [ix, r, c](Graph& gg, int id) {
        const Values& go = gg.node_grad(id);
        for (int j = 0; j < c; ++j) {
            for (int i = 0; i < r; ++i) {
                gg.accumulate_at(ix, static_cast<int64_t>(i) * c + j,
                                 go[static_cast<size_t>(j) * r + i]);
            }
        }
    };
    return record({c, r}, out, rg, rg ? std::function<void(Graph&, int)>(bwd) : nullptr);
}

Tensor Graph::reshape(const Tensor& x, const Shape& shape) {
    check_same_graph(x);
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    bool rg = x.requires_grad();
    int ix = x.node;
    auto bwd = [ix](Graph& gg, int id) { gg.accumulate(ix, gg.node_grad(id)); };
    // A reshape is a view; storage is shared with the input.
    return record(shape, nodes_[x.node].values, rg,
                  rg ? std::function<void(Graph&, int)>(bwd) : nullptr);
}

Tensor Graph::gather_rows(const Tensor& x, const std::vector<int>& rows) {
    check_same_graph(x);
    const Shape& s = x.shape();
    if (s.size() != 2) {
        throw ShapeError("gather_rows expects a 2-d tensor, got " + shape_str(s));
    }
    const int n = s[0], d = s[1];
    for (int r : rows) {
        if (r < 0 || r >= n) {
            throw ShapeError("gather_rows index " + std::to_string(r) + " out of range [0," +
                             std::to_string(n) + ")");
        }
    }
    const int m = static_cast<int>(rows.size());
    if (m == 0) throw ShapeError("gather_rows with empty index set");
    const Values& v = x.values();
    auto out = std::make_shared<Values>(static_cast<size_t>(m) * d);
    for (int i = 0; i < m; ++i) {
        std::copy_n(&v[static_cast<size_t>(rows[i]) * d], d, &(*out)[static_cast<size_t>(i) * d]);
    }
    bool rg = x.requires_grad();
    int ix = x.node;
    auto bwd = [ix, rows, d](Graph& gg, int id) {
        const Values& go = gg.node_grad(id);
        for (size_t i = 0; i < rows.size(); ++i) {
            for (int j = 0; j < d; ++j) {
                gg.accumulate_at(ix, static_cast<int64_t>(rows[i]) * d + j, go[i * d + j]);
            }
        }
    };
    return record({m, d}, out, rg, rg ? std::function<void(Graph&, int)>(bwd) : nullptr);
}

Tensor Graph::scatter_rows(const Tensor& x, const std::vector<int>& rows, int n_rows) {
    check_same_graph(x);
    const Shape& s = x.shape();
    if (s.size() != 2 || static_cast<int>(rows.size()) != s[0]) {
        throw ShapeError("scatter_rows: " + shape_str(s) + " with " + std::to_string(rows.size()) +
                         " destination rows");
    }
    const int d = s[1];
    for (int r : rows) {
        if (r < 0 || r >= n_rows) {
            throw ShapeError("scatter_rows index " + std::to_string(r) + " out of range [0," +
                             std::to_string(n_rows) + ")");
        }
    }
    const Values& v = x.values();
    auto out = std::make_shared<Values>(static_cast<size_t>(n_rows) * d, 0.0);
    for (size_t i = 0; i < rows.size(); ++i) {
        for (int j = 0; j < d; ++j) {
            (*out)[static_cast<size_t>(rows[i]) * d + j] += v[i * d + j];
        }
    }
    bool rg = x.requires_grad();
    int ix = x.node;
    auto bwd = [ix, rows, d](Graph& gg, int id) {
        const Values& go = gg.node_grad(id);
        for (size_t i = 0; i < rows.size(); ++i) {
            for (int j = 0; j < d; ++j) {
                gg.accumulate_at(ix, static_cast<int64_t>(i) * d + j,
                                 go[static_cast<size_t>(rows[i]) * d + j]);
            }
        }
    };
    return record({n_rows, d}, out, rg, rg ? std::function<void(Graph&, int)>(bwd) : nullptr);
}

Tensor Graph::concat(const std::vector<Tensor>& xs, int dim) {
    if (xs.empty()) throw ShapeError("concat of zero tensors");
    for (const Tensor& t : xs) check_same_graph(t);
    const Shape& s0 = xs[0].shape();
    if (s0.size() != 2 || (dim != 0 && dim != 1)) {
        throw ShapeError("concat supports 2-d tensors along dim 0 or 1");
    }
    int other = 1 - dim;
    int total = 0;
    bool rg = false;
    for (const Tensor& t : xs) {
        const Shape& s = t.shape();
        if (s.size() != 2 || s[other] != s0[other]) {
            throw ShapeError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(s0));
        }
        total += s[dim];
        rg = rg || t.requires_grad();
    }
    Shape os = s0;
    os[dim] = total;
    const int rows = os[0], cols = os[1];
    auto out = std::make_shared<Values>(static_cast<size_t>(rows) * cols);
    std::vector<int> offsets;
    std::vector<int> ids;
    int off = 0;
    for (const Tensor& t : xs) {
        const Shape& s = t.shape();
        const Values& v = t.values();
        if (dim == 0) {
            std::copy(v.begin(), v.end(), out->begin() + static_cast<size_t>(off) * cols);
        } else {
            for (int i = 0; i < rows; ++i) {
                std::copy_n(&v[static_cast<size_t>(i) * s[1]], s[1],
                            &(*out)[static_cast<size_t>(i) * cols + off]);
            }
        }
        offsets.push_back(off);
        ids.push_back(t.node);
        off += s[dim];
    }
    auto bwd = [ids, offsets, dim, rows, cols](Graph& gg, int id) {
        const Values& go = gg.node_grad(id);
        for (size_t t = 0; t < ids.size(); ++t) {
            const Shape& s = gg.node_shape(ids[t]);
            if (dim == 0) {
                for (int i = 0; i < s[0]; ++i) {
                    for (int j = 0; j < cols; ++j) {
                        gg.accumulate_at(ids[t], static_cast<int64_t>(i) * cols + j,
                                         go[static_cast<size_t>(offsets[t] + i) * cols + j]);
                    }
                }
            } else {
                for (int i = 0; i < rows; ++i) {
                    for (int j = 0; j < s[1]; ++j) {
                        gg.accumulate_at(ids[t], static_cast<int64_t>(i) * s[1] + j,
                                         go[static_cast<size_t>(i) * cols + offsets[t] + j]);
                    }
                }
            }
        }
    };
    return record(os, out, rg, rg ? std::function<void(Graph&, int)>(bwd) : nullptr);
}

Tensor Graph::slice(const Tensor& x, int dim, int start, int len) {
    check_same_graph(x);
    const Shape& s = x.shape();
    if (s.size() != 2 || (dim != 0 && dim != 1)) {
        throw ShapeError("slice supports 2-d tensors along dim 0 or 1");
    }
    if (start < 0 || len <= 0 || start + len > s[dim]) {
        throw ShapeError("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for dim " + std::to_string(dim) + " of " + shape_str(s));
    }
    Shape os = s;
    os[dim] = len;
    const int cols = s[1];
    const Values& v = x.values();
    auto out = std::make_shared<Values>(static_cast<size_t>(os[0]) * os[1]);
    if (dim == 0) {
        std::copy_n(&v[static_cast<size_t>(start) * cols], static_cast<size_t>(len) * cols,
                    out->begin());
    } else {
        for (int i = 0; i < s[0]; ++i) {
            std::copy_n(&v[static_cast<size_t>(i) * cols + start], len,
                        &(*out)[static_cast<size_t>(i) * len]);
        }
    }
    bool rg = x.requires_grad();
    int ix = x.node;
    auto bwd = [ix, dim, start, len, cols](Graph& gg, int id) {
        const Values& go = gg.node_grad(id);
        const Shape& os2 = gg.node_shape(id);
        if (dim == 0) {
            for (int64_t i = 0; i < static_cast<int64_t>(go.size()); ++i) {
                gg.accumulate_at(ix, static_cast<int64_t>(start) * cols + i, go[i]);
            }
        } else {
            for (int i = 0; i < os2[0]; ++i) {
                for (int j = 0; j < len; ++j) {
                    gg.accumulate_at(ix, static_cast<int64_t>(i) * cols + start + j,
                                     go[static_cast<size_t>(i) * len + j]);
                }
            }
        }
    };
    return record(os, out, rg, rg ? std::function<void(Graph&, int)>(bwd) : nullptr);
}

Tensor Graph::sum(const Tensor& x) {
    check_same_graph(x);
    const Values& v = x.values();
    double acc = 0.0;
    for (double e : v) acc += e;
    bool rg = x.requires_grad();
    int ix = x.node;
    int64_t n = x.numel();
    auto bwd = [ix, n](Graph& gg, int id) {
        double go = gg.node_grad(id)[0];
        for (int64_t i = 0; i < n; ++i) gg.accumulate_at(ix, i, go);
    };
    return record({1}, std::make_shared<Values>(Values{acc}), rg,
                  rg ? std::function<void(Graph&, int)>(bwd) : nullptr);
}

Tensor Graph::mean(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor Graph::softmax(const Tensor& x) {
    check_same_graph(x);
    const Shape& s = x.shape();
    const int c = s.back();
    const int64_t rows = x.numel() / c;
    const Values& v = x.values();
    auto out = std::make_shared<Values>(v.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* in = &v[r * c];
        double* o = &(*out)[r * c];
        double mx = in[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, in[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            o[j] = std::exp(in[j] - mx);
            z += o[j];
        }
        for (int j = 0; j < c; ++j) o[j] /= z;
    }
    bool rg = x.requires_grad();
    int ix = x.node;
    auto bwd = [ix, rows, c, out](Graph& gg, int id) {
        const Values& go = gg.node_grad(id);
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = &(*out)[r * c];
            const double* gy = &go[r * c];
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += gy[j] * y[j];
            for (int j = 0; j < c; ++j) {
                gg.accumulate_at(ix, r * c + j, y[j] * (gy[j] - dot));
            }
        }
    };
    return record(s, out, rg, rg ? std::function<void(Graph&, int)>(bwd) : nullptr);
}

Tensor Graph::layer_norm(const Tensor& x, double eps) {
    check_same_graph(x);
    if (eps <= 0.0) {
        throw ConfigError("layer_norm eps must be > 0, got " + std::to_string(eps));
    }
    const Shape& s = x.shape();
    const int c = s.back();
    const int64_t rows = x.numel() / c;
    const Values& v = x.values();
    auto out = std::make_shared<Values>(v.size());
    auto rstd = std::make_shared<Values>(rows);
    for (int64_t r = 0; r < rows; ++r) {
        const double* in = &v[r * c];
        double mu = 0.0;
        for (int j = 0; j < c; ++j) mu += in[j];
        mu /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= c;
        double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (int j = 0; j < c; ++j) (*out)[r * c + j] = (in[j] - mu) * rs;
    }
    bool rg = x.requires_grad();
    int ix = x.node;
    auto bwd = [ix, rows, c, out, rstd](Graph& gg, int id) {
        const Values& go = gg.node_grad(id);
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = &(*out)[r * c];
            const double* gy = &go[r * c];
            double gmean = 0.0, gymean = 0.0;
            for (int j = 0; j < c; ++j) {
                gmean += gy[j];
                gymean += gy[j] * y[j];
            }
            gmean /= c;
            gymean /= c;
            double rs = (*rstd)[r];
            for (int j = 0; j < c; ++j) {
                gg.accumulate_at(ix, r * c + j, rs * (gy[j] - gmean - y[j] * gymean));
            }
        }
    };
    return record(s, out, rg, rg ? std::function<void(Graph&, int)>(bwd) : nullptr);
}

Tensor Graph::gelu(const Tensor& x) {
    check_same_graph(x);
    return unary_elementwise(
        *this, x,
        [](double v) { return 0.5 * v * (1.0 + std::erf(v * 0.7071067811865475244)); },
        [](double v) {
            double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865475244));
            double pdf = 0.3989422804014326779 * std::exp(-0.5 * v * v);
            return cdf + v * pdf;
        });
}

Tensor Graph::abs(const Tensor& x) {
    check_same_graph(x);
    // Subgradient 0 at the kink.
    return unary_elementwise(
        *this, x, [](double v) { return std::abs(v); },
        [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor Graph::square(const Tensor& x) {
    check_same_graph(x);
    return unary_elementwise(
        *this, x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Tensor Graph::log(const Tensor& x) {
    check_same_graph(x);
    return unary_elementwise(
        *this, x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Tensor Graph::stop_gradient(const Tensor& x) {
    check_same_graph(x);
    // Shares the forward values; records no inputs, so nothing flows back.
    return record(x.shape(), nodes_[x.node].values, false);
}

void Graph::backward(const Tensor& root) {
    check_same_graph(root);
    if (backward_done_) {
        throw ConfigError("backward already ran on this graph");
    }
    if (root.numel() != 1) {
        throw ShapeError("backward root must be scalar, got shape " + shape_str(root.shape()));
    }
    backward_done_ = true;
    for (Node& nd : nodes_) {
        if (nd.requires_grad) nd.grad.assign(nd.values->size(), 0.0);
    }
    if (!nodes_[root.node].requires_grad) return;  // nothing depends on parameters
    nodes_[root.node].grad[0] = 1.0;
    for (int id = root.node; id >= 0; --id) {
        Node& nd = nodes_[id];
        if (nd.requires_grad && nd.backward_fn) nd.backward_fn(*this, id);
    }
}

const Values& Graph::grad(const Tensor& t) const {
    check_same_graph(t);
    if (!backward_done_) {
        throw ConfigError("grad requested before backward");
    }
    const Node& nd = nodes_[t.node];
    if (!nd.requires_grad) {
        throw ConfigError("grad requested for a tensor that does not require gradients");
    }
    return nd.grad;
}

const Values& Graph::grad_for(const ValuesPtr& storage) const {
    for (const auto& [ptr, id] : param_index_) {
        if (ptr == storage.get()) return grad(Tensor{const_cast<Graph*>(this), id});
    }
    throw ConfigError("storage is not a registered parameter of this graph");
}

bool Graph::has_param(const ValuesPtr& storage) const {
    for (const auto& [ptr, id] : param_index_) {
        if (ptr == storage.get()) return true;
    }
    return false;
}

GradCheckReport grad_check(const std::function<Tensor(Graph&, const Tensor&)>& f,
                           const Shape& shape, const Values& x0, double h, double tol) {
    if (h < 1e-7 || h > 1e-3) {
        throw ConfigError("grad_check step h must lie in [1e-7, 1e-3], got " + std::to_string(h));
    }
    if (tol <= 0.0) {
        throw ConfigError("grad_check tolerance must be > 0, got " + std::to_string(tol));
    }
    if (shape_numel(shape) != static_cast<int64_t>(x0.size())) {
        throw ShapeError("grad_check: x0 length " + std::to_string(x0.size()) +
                         " does not match shape " + shape_str(shape));
    }

    auto eval = [&](const Values& xv) {
        Graph g;
        Tensor x = g.param(shape, std::make_shared<Values>(xv));
        Tensor y = f(g, x);
        if (y.numel() != 1) {
            throw ConfigError("grad_check requires a scalar-valued function, got shape " +
                              shape_str(y.shape()));
        }
        return y.item();
    };

    GradCheckReport report;
    {
        Graph g;
        Tensor x = g.param(shape, std::make_shared<Values>(x0));
        Tensor y = f(g, x);
        if (y.numel() != 1) {
            throw ConfigError("grad_check requires a scalar-valued function, got shape " +
                              shape_str(y.shape()));
        }
        g.backward(y);
        report.analytic = g.grad(x);
    }
    report.numeric.resize(x0.size());
    for (size_t i = 0; i < x0.size(); ++i) {
        Values xp = x0, xm = x0;
        xp[i] += h;
        xm[i] -= h;
        report.numeric[i] = (eval(xp) - eval(xm)) / (2.0 * h);
    }
    for (size_t i = 0; i < x0.size(); ++i) {
        double a = report.analytic[i], n = report.numeric[i];
        // Below the floor both values are indistinguishable from zero; the
        // numeric side is dominated by rounding noise of order eps/h there.
        double denom = std::max({std::abs(a), std::abs(n), 1e-8});
        double rel = (std::abs(a) < 1e-8 && std::abs(n) < 1e-8) ? 0.0 : std::abs(a - n) / denom;
        report.max_rel_error = std::max(report.max_rel_error, rel);
        ++report.n_checked;
        if (rel >= tol) ++report.n_failed;
    }
    report.pass = report.n_failed == 0;
    return report;
}

}  // namespace emae
