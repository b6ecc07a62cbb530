#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace prsr::ad {

// Dense 2-D array of 64-bit reals. grad is kept alongside the data so that a
// parameter tensor can accumulate gradients across graphs.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // same length as data when requires_grad

  Tensor() = default;
  Tensor(int r, int c, double fill = 0.0);

  static Tensor zeros(int r, int c) { return Tensor(r, c, 0.0); }

  int size() const { return rows * cols; }
  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  void set_requires_grad(bool on);
  void zero_grad();
};

// Handle to a node inside a Graph.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// A single-use computation tape. Nodes are appended in evaluation order, which
// is already a topological order, so backward() is one reverse sweep that
// touches every node exactly once. Parameter leaves reference external Tensors
// and accumulate into their grad buffers.
class Graph {
 public:
  Var leaf(Tensor& param);
  Var constant(Tensor value);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double factor);
  Var transpose(Var a);
  Var row_select(Var a, std::vector<int> rows);
  Var col_slice(Var a, int first, int width);
  Var concat_rows(std::span<const Var> parts);
  Var concat_cols(std::span<const Var> parts);
  Var softmax_rows(Var a);
  Var sigmoid(Var a);
  // Row t of a multiplied (divided) by s[t]; s must be n x 1.
  Var rows_scale(Var a, Var s);
  Var rows_div(Var a, Var s);
  Var mean_rows(Var a);  // 1 x cols
  Var sum_all(Var a);    // 1 x 1

  // The reference is invalidated by the next op call on this graph; read what
  // you need before building further nodes.
  const Tensor& value(Var v) const;
  double scalar(Var v) const;

  // Seeds d(loss)/d(loss)=1 and sweeps the tape in reverse. loss must be 1x1.
  void backward(Var loss);

  size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op : uint8_t {
    leaf,
    constant,
    matmul,
    add,
    sub,
    mul,
    scale,
    transpose,
    row_select,
    col_slice,
    concat_rows,
    concat_cols,
    softmax_rows,
    sigmoid,
    rows_scale,
    rows_div,
    mean_rows,
    sum_all,
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    Tensor val;              // empty for leaves; the param holds the data
    Tensor* param = nullptr; // leaves only
    double factor = 0.0;     // scale
    int i0 = 0;              // col_slice offset / width payloads
    int i1 = 0;
    std::vector<int> index;  // row_select rows, concat part ids
    std::vector<double> grad;
  };

  const Tensor& val_of(const Node& n) const { return n.param ? *n.param : n.val; }
  const Tensor& val_of(int id) const { return val_of(nodes_[static_cast<size_t>(id)]); }
  Var push(Node n);
  void check_id(Var v) const;

  std::vector<Node> nodes_;
};

struct FdReport {
  double max_rel_err = 0.0;
  size_t checked = 0;
  size_t skipped = 0;
};

// Central-difference check of analytic gradients already stored in the
// parameters' grad buffers. value_fn must re-evaluate the scalar objective at
// the current parameter values. When selection_signature is provided,
// coordinates whose perturbation changes the signature (a discrete choice such
// as a top-K mask flipping) are skipped instead of compared.
FdReport finite_diff_check(const std::function<double()>& value_fn,
                           std::span<Tensor* const> params, double step,
                           const std::function<std::string()>& selection_signature = nullptr);

}  // namespace prsr::ad
