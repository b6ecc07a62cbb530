#include "prsr/autodiff.hpp"

#include <cmath>

#include "prsr/errors.hpp"

namespace prsr::ad {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw_error(ErrorCategory::dimension, msg);
}

std::string shape_str(const Tensor& t) {
  return std::to_string(t.rows) + "x" + std::to_string(t.cols);
}

}  // namespace

Tensor::Tensor(int r, int c, double fill)
    : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

void Tensor::set_requires_grad(bool on) {
  requires_grad = on;
  if (on) {
    grad.assign(data.size(), 0.0);
  } else {
    grad.clear();
  }
}

void Tensor::zero_grad() {
  if (requires_grad) grad.assign(data.size(), 0.0);
}

Var Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Graph::check_id(Var v) const {
  if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size()) {
    throw_error(ErrorCategory::contract, "invalid graph node handle");
  }
}

Var Graph::leaf(Tensor& param) {
  Node n;
  n.op = Op::leaf;
  n.param = &param;
  return push(std::move(n));
}

Var Graph::constant(Tensor value) {
  Node n;
  n.op = Op::constant;
  n.val = std::move(value);
  return push(std::move(n));
}

Var Graph::matmul(Var a, Var b) {
  check_id(a);
  check_id(b);
  const Tensor& ta = val_of(a.id);
  const Tensor& tb = val_of(b.id);
  require(ta.cols == tb.rows,
          "matmul shape mismatch " + shape_str(ta) + " * " + shape_str(tb));
  Node n;
  n.op = Op::matmul;
  n.a = a.id;
  n.b = b.id;
  n.val = Tensor(ta.rows, tb.cols);
  const int m = ta.rows, k = ta.cols, c = tb.cols;
  for (int i = 0; i < m; ++i) {
    const double* arow = ta.data.data() + static_cast<size_t>(i) * k;
    double* orow = n.val.data.data() + static_cast<size_t>(i) * c;
    for (int p = 0; p < k; ++p) {
      const double aip = arow[p];
      if (aip == 0.0) continue;
      const double* brow = tb.data.data() + static_cast<size_t>(p) * c;
      for (int j = 0; j < c; ++j) orow[j] += aip * brow[j];
    }
  }
  return push(std::move(n));
}

Var Graph::add(Var a, Var b) {
  check_id(a);
  check_id(b);
  const Tensor& ta = val_of(a.id);
  const Tensor& tb = val_of(b.id);
  require(ta.rows == tb.rows && ta.cols == tb.cols,
          "add shape mismatch " + shape_str(ta) + " vs " + shape_str(tb));
  Node n;
  n.op = Op::add;
  n.a = a.id;
  n.b = b.id;
  n.val = Tensor(ta.rows, ta.cols);
  for (size_t i = 0; i < ta.data.size(); ++i) n.val.data[i] = ta.data[i] + tb.data[i];
  return push(std::move(n));
}

Var Graph::sub(Var a, Var b) {
  check_id(a);
  check_id(b);
  const Tensor& ta = val_of(a.id);
  const Tensor& tb = val_of(b.id);
  require(ta.rows == tb.rows && ta.cols == tb.cols,
          "sub shape mismatch " + shape_str(ta) + " vs " + shape_str(tb));
  Node n;
  n.op = Op::sub;
  n.a = a.id;
  n.b = b.id;
  n.val = Tensor(ta.rows, ta.cols);
  for (size_t i = 0; i < ta.data.size(); ++i) n.val.data[i] = ta.data[i] - tb.data[i];
  return push(std::move(n));
}

Var Graph::mul(Var a, Var b) {
  check_id(a);
  check_id(b);
  const Tensor& ta = val_of(a.id);
  const Tensor& tb = val_of(b.id);
  require(ta.rows == tb.rows && ta.cols == tb.cols,
          "mul shape mismatch " + shape_str(ta) + " vs " + shape_str(tb));
  Node n;
  n.op = Op::mul;
  n.a = a.id;
  n.b = b.id;
  n.val = Tensor(ta.rows, ta.cols);
  for (size_t i = 0; i < ta.data.size(); ++i) n.val.data[i] = ta.data[i] * tb.data[i];
  return push(std::move(n));
}

Var Graph::scale(Var a, double factor) {
  check_id(a);
  const Tensor& ta = val_of(a.id);
  Node n;
  n.op = Op::scale;
  n.a = a.id;
  n.factor = factor;
  n.val = Tensor(ta.rows, ta.cols);
  for (size_t i = 0; i < ta.data.size(); ++i) n.val.data[i] = ta.data[i] * factor;
  return push(std::move(n));
}

Var Graph::transpose(Var a) {
  check_id(a);
  const Tensor& ta = val_of(a.id);
  Node n;
  n.op = Op::transpose;
  n.a = a.id;
  n.val = Tensor(ta.cols, ta.rows);
  for (int i = 0; i < ta.rows; ++i)
    for (int j = 0; j < ta.cols; ++j) n.val.at(j, i) = ta.at(i, j);
  return push(std::move(n));
}

Var Graph::row_select(Var a, std::vector<int> rows) {
  check_id(a);
  const Tensor& ta = val_of(a.id);
  for (int r : rows) {
    if (r < 0 || r >= ta.rows) {
      throw_error(ErrorCategory::invalid_input,
                  "row_select index " + std::to_string(r) + " out of range for " + shape_str(ta));
    }
  }
  Node n;
  n.op = Op::row_select;
  n.a = a.id;
  n.val = Tensor(static_cast<int>(rows.size()), ta.cols);
  for (size_t r = 0; r < rows.size(); ++r) {
    const double* src = ta.data.data() + static_cast<size_t>(rows[r]) * ta.cols;
    double* dst = n.val.data.data() + r * ta.cols;
    for (int j = 0; j < ta.cols; ++j) dst[j] = src[j];
  }
  n.index = std::move(rows);
  return push(std::move(n));
}

Var Graph::col_slice(Var a, int first, int width) {
  check_id(a);
  const Tensor& ta = val_of(a.id);
  require(first >= 0 && width > 0 && first + width <= ta.cols,
          "col_slice [" + std::to_string(first) + ", +" + std::to_string(width) +
              ") out of range for " + shape_str(ta));
  Node n;
  n.op = Op::col_slice;
  n.a = a.id;
  n.i0 = first;
  n.i1 = width;
  n.val = Tensor(ta.rows, width);
  for (int i = 0; i < ta.rows; ++i)
    for (int j = 0; j < width; ++j) n.val.at(i, j) = ta.at(i, first + j);
  return push(std::move(n));
}

Var Graph::concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows needs at least one part");
  int total_rows = 0;
  int cols = -1;
  for (Var p : parts) {
    check_id(p);
    const Tensor& t = val_of(p.id);
    if (cols < 0) cols = t.cols;
    require(t.cols == cols, "concat_rows parts disagree on column count");
    total_rows += t.rows;
  }
  Node n;
  n.op = Op::concat_rows;
  n.val = Tensor(total_rows, cols);
  int row = 0;
  for (Var p : parts) {
    const Tensor& t = val_of(p.id);
    for (int i = 0; i < t.rows; ++i)
      for (int j = 0; j < cols; ++j) n.val.at(row + i, j) = t.at(i, j);
    row += t.rows;
    n.index.push_back(p.id);
  }
  return push(std::move(n));
}

Var Graph::concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols needs at least one part");
  int total_cols = 0;
  int rows = -1;
  for (Var p : parts) {
    check_id(p);
    const Tensor& t = val_of(p.id);
    if (rows < 0) rows = t.rows;
    require(t.rows == rows, "concat_cols parts disagree on row count");
    total_cols += t.cols;
  }
  Node n;
  n.op = Op::concat_cols;
  n.val = Tensor(rows, total_cols);
  int col = 0;
  for (Var p : parts) {
    const Tensor& t = val_of(p.id);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < t.cols; ++j) n.val.at(i, col + j) = t.at(i, j);
    col += t.cols;
    n.index.push_back(p.id);
  }
  return push(std::move(n));
}

Var Graph::softmax_rows(Var a) {
  check_id(a);
  const Tensor& ta = val_of(a.id);
  Node n;
  n.op = Op::softmax_rows;
  n.a = a.id;
  n.val = Tensor(ta.rows, ta.cols);
  for (int i = 0; i < ta.rows; ++i) {
    const double* src = ta.data.data() + static_cast<size_t>(i) * ta.cols;
    double* dst = n.val.data.data() + static_cast<size_t>(i) * ta.cols;
    double mx = src[0];
    for (int j = 1; j < ta.cols; ++j) mx = std::max(mx, src[j]);
    double sum = 0.0;
    for (int j = 0; j < ta.cols; ++j) {
      dst[j] = std::exp(src[j] - mx);
      sum += dst[j];
    }
    for (int j = 0; j < ta.cols; ++j) dst[j] /= sum;
  }
  return push(std::move(n));
}

Var Graph::sigmoid(Var a) {
  check_id(a);
  const Tensor& ta = val_of(a.id);
  Node n;
  n.op = Op::sigmoid;
  n.a = a.id;
  n.val = Tensor(ta.rows, ta.cols);
  for (size_t i = 0; i < ta.data.size(); ++i) n.val.data[i] = 1.0 / (1.0 + std::exp(-ta.data[i]));
  return push(std::move(n));
}

Var Graph::rows_scale(Var a, Var s) {
  check_id(a);
  check_id(s);
  const Tensor& ta = val_of(a.id);
  const Tensor& ts = val_of(s.id);
  require(ts.cols == 1 && ts.rows == ta.rows,
          "rows_scale needs an n x 1 scaler matching " + shape_str(ta));
  Node n;
  n.op = Op::rows_scale;
  n.a = a.id;
  n.b = s.id;
  n.val = Tensor(ta.rows, ta.cols);
  for (int i = 0; i < ta.rows; ++i) {
    const double f = ts.data[static_cast<size_t>(i)];
    for (int j = 0; j < ta.cols; ++j) n.val.at(i, j) = ta.at(i, j) * f;
  }
  return push(std::move(n));
}

Var Graph::rows_div(Var a, Var s) {
  check_id(a);
  check_id(s);
  const Tensor& ta = val_of(a.id);
  const Tensor& ts = val_of(s.id);
  require(ts.cols == 1 && ts.rows == ta.rows,
          "rows_div needs an n x 1 divisor matching " + shape_str(ta));
  Node n;
  n.op = Op::rows_div;
  n.a = a.id;
  n.b = s.id;
  n.val = Tensor(ta.rows, ta.cols);
  for (int i = 0; i < ta.rows; ++i) {
    const double f = ts.data[static_cast<size_t>(i)];
    for (int j = 0; j < ta.cols; ++j) n.val.at(i, j) = ta.at(i, j) / f;
  }
  return push(std::move(n));
}

Var Graph::mean_rows(Var a) {
  check_id(a);
  const Tensor& ta = val_of(a.id);
  require(ta.rows > 0, "mean_rows needs at least one row");
  Node n;
  n.op = Op::mean_rows;
  n.a = a.id;
  n.val = Tensor(1, ta.cols);
  for (int i = 0; i < ta.rows; ++i)
    for (int j = 0; j < ta.cols; ++j) n.val.data[static_cast<size_t>(j)] += ta.at(i, j);
  for (int j = 0; j < ta.cols; ++j) n.val.data[static_cast<size_t>(j)] /= ta.rows;
  return push(std::move(n));
}

Var Graph::sum_all(Var a) {
  check_id(a);
  const Tensor& ta = val_of(a.id);
  Node n;
  n.op = Op::sum_all;
  n.a = a.id;
  n.val = Tensor(1, 1);
  double acc = 0.0;
  for (double v : ta.data) acc += v;
  n.val.data[0] = acc;
  return push(std::move(n));
}

const Tensor& Graph::value(Var v) const {
  check_id(v);
  return val_of(v.id);
}

double Graph::scalar(Var v) const {
  const Tensor& t = value(v);
  if (t.rows != 1 || t.cols != 1) {
    throw_error(ErrorCategory::contract, "scalar() called on a " + shape_str(t) + " node");
  }
  return t.data[0];
}

void Graph::backward(Var loss) {
  check_id(loss);
  {
    const Tensor& t = val_of(loss.id);
    if (t.rows != 1 || t.cols != 1) {
      throw_error(ErrorCategory::contract,
                  "backward requires a scalar loss, got " + shape_str(t));
    }
  }

  for (size_t i = 0; i <= static_cast<size_t>(loss.id); ++i) {
    nodes_[i].grad.assign(val_of(nodes_[i]).data.size(), 0.0);
  }
  nodes_[static_cast<size_t>(loss.id)].grad[0] = 1.0;

  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    const std::vector<double>& g = n.grad;

    switch (n.op) {
      case Op::leaf:
        if (n.param->requires_grad) {
          if (n.param->grad.size() != n.param->data.size()) {
            n.param->grad.assign(n.param->data.size(), 0.0);
          }
          for (size_t i = 0; i < g.size(); ++i) n.param->grad[i] += g[i];
        }
        break;
      case Op::constant:
        break;
      case Op::matmul: {
        const Tensor& ta = val_of(n.a);
        const Tensor& tb = val_of(n.b);
        std::vector<double>& ga = nodes_[static_cast<size_t>(n.a)].grad;
        std::vector<double>& gb = nodes_[static_cast<size_t>(n.b)].grad;
        const int m = ta.rows, k = ta.cols, c = tb.cols;
        // dA = G * B^T
        for (int i = 0; i < m; ++i) {
          const double* grow = g.data() + static_cast<size_t>(i) * c;
          double* garow = ga.data() + static_cast<size_t>(i) * k;
          for (int p = 0; p < k; ++p) {
            const double* brow = tb.data.data() + static_cast<size_t>(p) * c;
            double acc = 0.0;
            for (int j = 0; j < c; ++j) acc += grow[j] * brow[j];
            garow[p] += acc;
          }
        }
        // dB = A^T * G
        for (int i = 0; i < m; ++i) {
          const double* arow = ta.data.data() + static_cast<size_t>(i) * k;
          const double* grow = g.data() + static_cast<size_t>(i) * c;
          for (int p = 0; p < k; ++p) {
            const double aip = arow[p];
            if (aip == 0.0) continue;
            double* gbrow = gb.data() + static_cast<size_t>(p) * c;
            for (int j = 0; j < c; ++j) gbrow[j] += aip * grow[j];
          }
        }
        break;
      }
      case Op::add: {
        std::vector<double>& ga = nodes_[static_cast<size_t>(n.a)].grad;
        std::vector<double>& gb = nodes_[static_cast<size_t>(n.b)].grad;
        for (size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] += g[i];
        }
        break;
      }
      case Op::sub: {
        std::vector<double>& ga = nodes_[static_cast<size_t>(n.a)].grad;
        std::vector<double>& gb = nodes_[static_cast<size_t>(n.b)].grad;
        for (size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] -= g[i];
        }
        break;
      }
      case Op::mul: {
        const Tensor& ta = val_of(n.a);
        const Tensor& tb = val_of(n.b);
        std::vector<double>& ga = nodes_[static_cast<size_t>(n.a)].grad;
        std::vector<double>& gb = nodes_[static_cast<size_t>(n.b)].grad;
        for (size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * tb.data[i];
          gb[i] += g[i] * ta.data[i];
        }
        break;
      }
      case Op::scale: {
        std::vector<double>& ga = nodes_[static_cast<size_t>(n.a)].grad;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.factor;
        break;
      }
      case Op::transpose: {
        const Tensor& ta = val_of(n.a);
        std::vector<double>& ga = nodes_[static_cast<size_t>(n.a)].grad;
        for (int i = 0; i < ta.rows; ++i)
          for (int j = 0; j < ta.cols; ++j)
            ga[static_cast<size_t>(i) * ta.cols + j] +=
                g[static_cast<size_t>(j) * ta.rows + i];
        break;
      }
      case Op::row_select: {
        const Tensor& ta = val_of(n.a);
        std::vector<double>& ga = nodes_[static_cast<size_t>(n.a)].grad;
        for (size_t r = 0; r < n.index.size(); ++r) {
          double* dst = ga.data() + static_cast<size_t>(n.index[r]) * ta.cols;
          const double* src = g.data() + r * ta.cols;
          for (int j = 0; j < ta.cols; ++j) dst[j] += src[j];
        }
        break;
      }
      case Op::col_slice: {
        const Tensor& ta = val_of(n.a);
        std::vector<double>& ga = nodes_[static_cast<size_t>(n.a)].grad;
        for (int i = 0; i < ta.rows; ++i)
          for (int j = 0; j < n.i1; ++j)
            ga[static_cast<size_t>(i) * ta.cols + n.i0 + j] +=
                g[static_cast<size_t>(i) * n.i1 + j];
        break;
      }
      case Op::concat_rows: {
        int row = 0;
        const int cols = n.val.cols;
        for (int pid : n.index) {
          const Tensor& tp = val_of(pid);
          std::vector<double>& gp = nodes_[static_cast<size_t>(pid)].grad;
          for (int i = 0; i < tp.rows; ++i)
            for (int j = 0; j < cols; ++j)
              gp[static_cast<size_t>(i) * cols + j] +=
                  g[static_cast<size_t>(row + i) * cols + j];
          row += tp.rows;
        }
        break;
      }
      case Op::concat_cols: {
        int col = 0;
        const int rows = n.val.rows;
        const int total_cols = n.val.cols;
        for (int pid : n.index) {
          const Tensor& tp = val_of(pid);
          std::vector<double>& gp = nodes_[static_cast<size_t>(pid)].grad;
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < tp.cols; ++j)
              gp[static_cast<size_t>(i) * tp.cols + j] +=
                  g[static_cast<size_t>(i) * total_cols + col + j];
          col += tp.cols;
        }
        break;
      }
      case Op::softmax_rows: {
        const Tensor& y = n.val;
        std::vector<double>& ga = nodes_[static_cast<size_t>(n.a)].grad;
        for (int i = 0; i < y.rows; ++i) {
          const double* yrow = y.data.data() + static_cast<size_t>(i) * y.cols;
          const double* grow = g.data() + static_cast<size_t>(i) * y.cols;
          double dot = 0.0;
          for (int j = 0; j < y.cols; ++j) dot += grow[j] * yrow[j];
          double* garow = ga.data() + static_cast<size_t>(i) * y.cols;
          for (int j = 0; j < y.cols; ++j) garow[j] += yrow[j] * (grow[j] - dot);
        }
        break;
      }
      case Op::sigmoid: {
        const Tensor& y = n.val;
        std::vector<double>& ga = nodes_[static_cast<size_t>(n.a)].grad;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y.data[i] * (1.0 - y.data[i]);
        break;
      }
      case Op::rows_scale: {
        const Tensor& ta = val_of(n.a);
        const Tensor& ts = val_of(n.b);
        std::vector<double>& ga = nodes_[static_cast<size_t>(n.a)].grad;
        std::vector<double>& gs = nodes_[static_cast<size_t>(n.b)].grad;
        for (int i = 0; i < ta.rows; ++i) {
          const double f = ts.data[static_cast<size_t>(i)];
          double acc = 0.0;
          for (int j = 0; j < ta.cols; ++j) {
            const size_t idx = static_cast<size_t>(i) * ta.cols + j;
            ga[idx] += g[idx] * f;
            acc += g[idx] * ta.data[idx];
          }
          gs[static_cast<size_t>(i)] += acc;
        }
        break;
      }
      case Op::rows_div: {
        const Tensor& ta = val_of(n.a);
        const Tensor& ts = val_of(n.b);
        std::vector<double>& ga = nodes_[static_cast<size_t>(n.a)].grad;
        std::vector<double>& gs = nodes_[static_cast<size_t>(n.b)].grad;
        for (int i = 0; i < ta.rows; ++i) {
          const double f = ts.data[static_cast<size_t>(i)];
          double acc = 0.0;
          for (int j = 0; j < ta.cols; ++j) {
            const size_t idx = static_cast<size_t>(i) * ta.cols + j;
            ga[idx] += g[idx] / f;
            acc += g[idx] * ta.data[idx];
          }
          gs[static_cast<size_t>(i)] -= acc / (f * f);
        }
        break;
      }
      case Op::mean_rows: {
        const Tensor& ta = val_of(n.a);
        std::vector<double>& ga = nodes_[static_cast<size_t>(n.a)].grad;
        const double inv = 1.0 / ta.rows;
        for (int i = 0; i < ta.rows; ++i)
          for (int j = 0; j < ta.cols; ++j)
            ga[static_cast<size_t>(i) * ta.cols + j] += g[static_cast<size_t>(j)] * inv;
        break;
      }
      case Op::sum_all: {
        std::vector<double>& ga = nodes_[static_cast<size_t>(n.a)].grad;
        const double gv = g[0];
        for (double& v : ga) v += gv;
        break;
      }
    }
  }
}

FdReport finite_diff_check(const std::function<double()>& value_fn,
                           std::span<Tensor* const> params, double step,
                           const std::function<std::string()>& selection_signature) {
  if (!(step > 0.0)) {
    throw_error(ErrorCategory::invalid_input, "finite difference step must be positive");
  }
  FdReport report;
  for (Tensor* param : params) {
    for (size_t i = 0; i < param->data.size(); ++i) {
      const double saved = param->data[i];

      param->data[i] = saved + step;
      const std::string sig_plus = selection_signature ? selection_signature() : std::string();
      const double f_plus = value_fn();

      param->data[i] = saved - step;
      const std::string sig_minus = selection_signature ? selection_signature() : std::string();
      const double f_minus = value_fn();

      param->data[i] = saved;

      if (selection_signature && sig_plus != sig_minus) {
        ++report.skipped;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double analytic = param->grad.empty() ? 0.0 : param->grad[i];
      const double rel = std::fabs(analytic - numeric) / std::max(1.0, std::fabs(numeric));
      report.max_rel_err = std::max(report.max_rel_err, rel);
      ++report.checked;
    }
  }
  return report;
}

}  // namespace prsr::ad
