#ifndef EMAE_TENSOR_HPP
#define EMAE_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace emae {

class Graph;

using Values = std::vector<double>;
using ValuesPtr = std::shared_ptr<Values>;
using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Handle to a node in a Graph. Cheap to copy; the graph owns the storage.
struct Tensor {
    Graph* graph = nullptr;
    int node = -1;

    const Shape& shape() const;
    const Values& values() const;
    int64_t numel() const;
    double value(int64_t i) const;
    // Scalar convenience; requires numel() == 1.
    double item() const;
    bool requires_grad() const;
    // Gradient of the last backward() w.r.t. this tensor. Valid only after
    // backward and only for requires-grad tensors.
    const Values& grad() const;
};

// Reverse-mode tape. One recording stream, one backward pass; calling
// backward a second time is an error. Elementwise math is sequential
// left-to-right so results are bit-reproducible.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Leaf requiring gradients. The same storage pointer registered twice
    // returns the same node, so shared parameters accumulate fan-out grads.
    Tensor param(const Shape& shape, ValuesPtr storage);
    // Leaf without gradients.
    Tensor constant(const Shape& shape, ValuesPtr storage);
    Tensor constant(const Shape& shape, Values values);
    Tensor scalar(double v);

    // Elementwise; b may share a's shape, be a trailing suffix of it
    // (broadcast over leading dims), or be a scalar.
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    // x * c for a plain scalar constant.
    Tensor scale(const Tensor& x, double c);

    Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n]
    Tensor transpose(const Tensor& x);                // 2-d
    Tensor reshape(const Tensor& x, const Shape& shape);
    Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
    // Rows of x placed at `rows` of an [n_rows, cols] zero tensor.
    // Duplicate destinations accumulate.
    Tensor scatter_rows(const Tensor& x, const std::vector<int>& rows, int n_rows);
    Tensor concat(const std::vector<Tensor>& xs, int dim);       // 2-d
    Tensor slice(const Tensor& x, int dim, int start, int len);  // 2-d

    Tensor sum(const Tensor& x);   // full reduction -> [1]
    Tensor mean(const Tensor& x);  // full reduction -> [1]

    Tensor softmax(const Tensor& x);  // last dim
    // Normalization only ((x - mean) / sqrt(var + eps) over the last dim);
    // apply affine scale/shift with mul/add.
    Tensor layer_norm(const Tensor& x, double eps = 1e-6);
    Tensor gelu(const Tensor& x);
    Tensor abs(const Tensor& x);
    Tensor square(const Tensor& x);
    Tensor log(const Tensor& x);

    // Identity forward, zero derivative backward.
    Tensor stop_gradient(const Tensor& x);

    // Reverse pass from a scalar root. Allocates zero grads for every
    // requires-grad node, then accumulates in reverse tape order.
    void backward(const Tensor& root);

    bool backward_done() const { return backward_done_; }
    const Values& grad(const Tensor& t) const;
    // Gradient lookup by parameter storage (for optimizer loops).
    const Values& grad_for(const ValuesPtr& storage) const;
    bool has_param(const ValuesPtr& storage) const;

    size_t size() const { return nodes_.size(); }

    // Node-level surface used by op backward closures.
    Tensor record(Shape shape, ValuesPtr values, bool requires_grad,
                  std::function<void(Graph&, int)> backward_fn = nullptr);
    const Shape& node_shape(int id) const { return nodes_[id].shape; }
    const Values& node_values(int id) const { return *nodes_[id].values; }
    const Values& node_grad(int id) const { return nodes_[id].grad; }
    bool node_requires_grad(int id) const { return nodes_[id].requires_grad; }
    void accumulate(int id, const Values& df);
    void accumulate_at(int id, int64_t offset, double v);

private:
    struct Node {
        Shape shape;
        ValuesPtr values;
        bool requires_grad = false;
        std::function<void(Graph&, int)> backward_fn;
        Values grad;  // filled during backward for requires-grad nodes
    };

    void check_same_graph(const Tensor& t) const;

    std::vector<Node> nodes_;
    std::vector<std::pair<const void*, int>> param_index_;
    bool backward_done_ = false;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    int64_t n_checked = 0;
    int64_t n_failed = 0;
    bool pass = false;
    Values analytic;
    Values numeric;
};

// Central-difference check of a scalar-valued function against the analytic
// gradient produced by backward(). The function is rebuilt on a fresh graph
// for every probe, so the check is independent of any one tape.
GradCheckReport grad_check(const std::function<Tensor(Graph&, const Tensor&)>& f,
                           const Shape& shape, const Values& x0, double h, double tol);

}  // namespace emae

#endif  // EMAE_TENSOR_HPP
