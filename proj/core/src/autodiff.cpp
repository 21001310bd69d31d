#include "takin/autodiff.hpp"

#include <cmath>

#include "takin/kpspace.hpp"
#include "takin/losses.hpp"

namespace takin::ad {

Var Tape::push(Eigen::MatrixXd value, bool track) {
  require(value.allFinite(), ErrorKind::numeric, "tape input contains non-finite entries");
  Node node;
  node.value = std::move(value);
  node.track = track;
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push_op(Eigen::MatrixXd value, std::initializer_list<Var> parents,
                  std::function<void(Tape&, int)> back) {
  bool track = false;
  for (const Var p : parents) track = track || tracked(p);
  Node node;
  node.value = std::move(value);
  node.track = track;
  if (track) node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

int Tape::check(Var v) const {
  require(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), ErrorKind::invalid_argument,
          "tape variable out of range");
  return v.id;
}

Eigen::MatrixXd& Tape::grad_ref(int id) {
  Node& node = nodes_[static_cast<std::size_t>(id)];
  if (node.grad.size() == 0) node.grad = Eigen::MatrixXd::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

Eigen::MatrixXd Tape::gradient(Var v) const {
  const Node& node = nodes_[static_cast<std::size_t>(check(v))];
  if (node.grad.size() == 0) return Eigen::MatrixXd::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

void Tape::clear() { nodes_.clear(); }

void Tape::backward(Var loss) {
  const int id = check(loss);
  const Node& top = nodes_[static_cast<std::size_t>(id)];
  require(top.value.rows() == 1 && top.value.cols() == 1, ErrorKind::invalid_argument,
          "backward target must be scalar (1 x 1)");
  grad_ref(id)(0, 0) = 1.0;
  for (int i = id; i >= 0; --i) {
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (!node.track || !node.back || node.grad.size() == 0) continue;
    node.back(*this, i);
  }
}

namespace {

void check_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::dimension_mismatch,
          std::string(op) + ": operand shapes differ");
}

}  // namespace

Var Tape::add(Var a, Var b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  check_same_shape(va, vb, "add");
  const int ia = a.id, ib = b.id;
  return push_op(va + vb, {a, b}, [ia, ib](Tape& t, int out) {
    const Eigen::MatrixXd& g = t.grad_of(out);
    if (t.nodes_[static_cast<std::size_t>(ia)].track) t.grad_ref(ia) += g;
    if (t.nodes_[static_cast<std::size_t>(ib)].track) t.grad_ref(ib) += g;
  });
}

Var Tape::sub(Var a, Var b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  check_same_shape(va, vb, "sub");
  const int ia = a.id, ib = b.id;
  return push_op(va - vb, {a, b}, [ia, ib](Tape& t, int out) {
    const Eigen::MatrixXd& g = t.grad_of(out);
    if (t.nodes_[static_cast<std::size_t>(ia)].track) t.grad_ref(ia) += g;
    if (t.nodes_[static_cast<std::size_t>(ib)].track) t.grad_ref(ib) -= g;
  });
}

Var Tape::add_rowvec(Var a, Var bias) {
  const auto& va = value(a);
  const auto& vb = value(bias);
  require(vb.rows() == 1 && vb.cols() == va.cols(), ErrorKind::dimension_mismatch,
          "add_rowvec: bias must be 1 x cols");
  Eigen::MatrixXd out = va;
  out.rowwise() += vb.row(0);
  const int ia = a.id, ib = bias.id;
  return push_op(std::move(out), {a, bias}, [ia, ib](Tape& t, int out_id) {
    const Eigen::MatrixXd& g = t.grad_of(out_id);
    if (t.nodes_[static_cast<std::size_t>(ia)].track) t.grad_ref(ia) += g;
    if (t.nodes_[static_cast<std::size_t>(ib)].track) t.grad_ref(ib) += g.colwise().sum();
  });
}

Var Tape::mul(Var a, Var b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  check_same_shape(va, vb, "mul");
  const int ia = a.id, ib = b.id;
  return push_op(va.cwiseProduct(vb), {a, b}, [ia, ib](Tape& t, int out) {
    const Eigen::MatrixXd& g = t.grad_of(out);
    if (t.nodes_[static_cast<std::size_t>(ia)].track)
      t.grad_ref(ia) += g.cwiseProduct(t.value_of(ib));
    if (t.nodes_[static_cast<std::size_t>(ib)].track)
      t.grad_ref(ib) += g.cwiseProduct(t.value_of(ia));
  });
}

Var Tape::scale(Var a, double c) {
  const int ia = a.id;
  return push_op(value(a) * c, {a}, [ia, c](Tape& t, int out) {
    if (t.nodes_[static_cast<std::size_t>(ia)].track) t.grad_ref(ia) += t.grad_of(out) * c;
  });
}

Var Tape::matmul(Var a, Var b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  require(va.cols() == vb.rows(), ErrorKind::dimension_mismatch, "matmul: inner dims differ");
  const int ia = a.id, ib = b.id;
  return push_op(va * vb, {a, b}, [ia, ib](Tape& t, int out) {
    const Eigen::MatrixXd& g = t.grad_of(out);
    if (t.nodes_[static_cast<std::size_t>(ia)].track)
      t.grad_ref(ia) += g * t.value_of(ib).transpose();
    if (t.nodes_[static_cast<std::size_t>(ib)].track)
      t.grad_ref(ib) += t.value_of(ia).transpose() * g;
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  require(va.cols() == vb.cols(), ErrorKind::dimension_mismatch, "matmul_nt: inner dims differ");
  const int ia = a.id, ib = b.id;
  return push_op(va * vb.transpose(), {a, b}, [ia, ib](Tape& t, int out) {
    const Eigen::MatrixXd& g = t.grad_of(out);
    if (t.nodes_[static_cast<std::size_t>(ia)].track) t.grad_ref(ia) += g * t.value_of(ib);
    if (t.nodes_[static_cast<std::size_t>(ib)].track)
      t.grad_ref(ib) += g.transpose() * t.value_of(ia);
  });
}

Var Tape::tanh_of(Var a) {
  Eigen::MatrixXd y = value(a).array().tanh().matrix();
  const int ia = a.id;
  return push_op(std::move(y), {a}, [ia](Tape& t, int out) {
    if (!t.nodes_[static_cast<std::size_t>(ia)].track) return;
    const Eigen::MatrixXd& y_val = t.value_of(out);
    t.grad_ref(ia) +=
        t.grad_of(out).cwiseProduct((1.0 - y_val.array().square()).matrix());
  });
}

Var Tape::tanh_scaled(Var a, const Eigen::RowVectorXd& scales) {
  const auto& va = value(a);
  require(scales.size() == va.cols(), ErrorKind::dimension_mismatch,
          "tanh_scaled: scale count must match columns");
  Eigen::MatrixXd th = va.array().tanh().matrix();
  Eigen::MatrixXd out = th.array().rowwise() * scales.array();
  const int ia = a.id;
  return push_op(std::move(out), {a}, [ia, scales, th](Tape& t, int out_id) {
    if (!t.nodes_[static_cast<std::size_t>(ia)].track) return;
    Eigen::MatrixXd d = (1.0 - th.array().square()).matrix();
    d = d.array().rowwise() * scales.array();
    t.grad_ref(ia) += t.grad_of(out_id).cwiseProduct(d);
  });
}

Var Tape::softmax_rows(Var a) {
  const auto& va = value(a);
  Eigen::MatrixXd y(va.rows(), va.cols());
  for (Eigen::Index r = 0; r < va.rows(); ++r) {
    const double m = va.row(r).maxCoeff();
    Eigen::ArrayXd e = (va.row(r).array() - m).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  const int ia = a.id;
  return push_op(std::move(y), {a}, [ia](Tape& t, int out) {
    if (!t.nodes_[static_cast<std::size_t>(ia)].track) return;
    const Eigen::MatrixXd& y_val = t.value_of(out);
    const Eigen::MatrixXd& g = t.grad_of(out);
    Eigen::MatrixXd& da = t.grad_ref(ia);
    for (Eigen::Index r = 0; r < y_val.rows(); ++r) {
      const double dot = g.row(r).cwiseProduct(y_val.row(r)).sum();
      da.row(r) += y_val.row(r).cwiseProduct(g.row(r).array().matrix() -
                                             Eigen::RowVectorXd::Constant(y_val.cols(), dot));
    }
  });
}

Var Tape::layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  const auto& vx = value(x);
  const auto& vg = value(gamma);
  const auto& vb = value(beta);
  require(vg.rows() == 1 && vg.cols() == vx.cols() && vb.rows() == 1 && vb.cols() == vx.cols(),
          ErrorKind::dimension_mismatch, "layer_norm_rows: gamma/beta must be 1 x cols");
  const Eigen::Index rows = vx.rows(), cols = vx.cols();
  Eigen::MatrixXd hat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = vx.row(r).mean();
    const double var = (vx.row(r).array() - mean).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    hat.row(r) = (vx.row(r).array() - mean).matrix() * inv_std[r];
  }
  Eigen::MatrixXd out = hat.array().rowwise() * vg.row(0).array();
  out.rowwise() += vb.row(0);
  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return push_op(std::move(out), {x, gamma, beta},
                 [ix, ig, ib, hat, inv_std](Tape& t, int out_id) {
                   const Eigen::MatrixXd& g = t.grad_of(out_id);
                   if (t.nodes_[static_cast<std::size_t>(ig)].track)
                     t.grad_ref(ig) += g.cwiseProduct(hat).colwise().sum();
                   if (t.nodes_[static_cast<std::size_t>(ib)].track)
                     t.grad_ref(ib) += g.colwise().sum();
                   if (!t.nodes_[static_cast<std::size_t>(ix)].track) return;
                   const Eigen::MatrixXd& gamma_val = t.value_of(ig);
                   Eigen::MatrixXd& dx = t.grad_ref(ix);
                   for (Eigen::Index r = 0; r < g.rows(); ++r) {
                     const Eigen::RowVectorXd gy = g.row(r).cwiseProduct(gamma_val.row(0));
                     const double mean_gy = gy.mean();
                     const double mean_gy_hat = gy.cwiseProduct(hat.row(r)).mean();
                     dx.row(r) += (gy.array() - mean_gy - hat.row(r).array() * mean_gy_hat)
                                      .matrix() *
                                  inv_std[r];
                   }
                 });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::invalid_argument, "concat_cols: no inputs");
  const Eigen::Index rows = value(parts[0]).rows();
  Eigen::Index total = 0;
  for (const Var p : parts) {
    require(value(p).rows() == rows, ErrorKind::dimension_mismatch,
            "concat_cols: row counts differ");
    total += value(p).cols();
  }
  Eigen::MatrixXd out(rows, total);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  bool track = false;
  for (const Var p : parts) {
    out.middleCols(at, value(p).cols()) = value(p);
    ids.push_back(p.id);
    offsets.push_back(at);
    at += value(p).cols();
    track = track || tracked(p);
  }
  Node node;
  node.value = std::move(out);
  node.track = track;
  if (track) {
    node.back = [ids, offsets](Tape& t, int out_id) {
      const Eigen::MatrixXd& g = t.grad_of(out_id);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const int pid = ids[i];
        if (!t.nodes_[static_cast<std::size_t>(pid)].track) continue;
        const Eigen::Index cols = t.value_of(pid).cols();
        t.grad_ref(pid) += g.middleCols(offsets[i], cols);
      }
    };
  }
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::slice_cols(Var a, int first, int count) {
  const auto& va = value(a);
  require(first >= 0 && count >= 1 && first + count <= va.cols(),
          ErrorKind::invalid_argument, "slice_cols: range out of bounds");
  const int ia = a.id;
  return push_op(va.middleCols(first, count), {a}, [ia, first, count](Tape& t, int out) {
    if (t.nodes_[static_cast<std::size_t>(ia)].track)
      t.grad_ref(ia).middleCols(first, count) += t.grad_of(out);
  });
}

Var Tape::dwconv_time(Var x, Var weights, Var bias) {
  const auto& vx = value(x);
  const auto& vw = value(weights);
  const auto& vb = value(bias);
  require(vw.cols() == vx.cols(), ErrorKind::dimension_mismatch,
          "dwconv_time: channel counts differ");
  require(vw.rows() % 2 == 1, ErrorKind::invalid_argument, "dwconv_time: kernel must be odd");
  require(vb.rows() == 1 && vb.cols() == vx.cols(), ErrorKind::dimension_mismatch,
          "dwconv_time: bias must be 1 x channels");
  const Eigen::Index taps = vw.rows(), rows = vx.rows(), cols = vx.cols();
  const Eigen::Index off = taps / 2;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows, cols);
  for (Eigen::Index t = 0; t < rows; ++t)
    for (Eigen::Index k = 0; k < taps; ++k) {
      const Eigen::Index s = t + k - off;
      if (s < 0 || s >= rows) continue;
      out.row(t) += vw.row(k).cwiseProduct(vx.row(s));
    }
  out.rowwise() += vb.row(0);
  const int ix = x.id, iw = weights.id, ib = bias.id;
  return push_op(std::move(out), {x, weights, bias}, [ix, iw, ib, taps, off](Tape& t, int out_id) {
    const Eigen::MatrixXd& g = t.grad_of(out_id);
    const Eigen::MatrixXd& x_val = t.value_of(ix);
    const Eigen::MatrixXd& w_val = t.value_of(iw);
    const Eigen::Index rows = g.rows();
    if (t.nodes_[static_cast<std::size_t>(ib)].track) t.grad_ref(ib) += g.colwise().sum();
    if (t.nodes_[static_cast<std::size_t>(iw)].track) {
      Eigen::MatrixXd& dw = t.grad_ref(iw);
      for (Eigen::Index k = 0; k < taps; ++k)
        for (Eigen::Index tt = 0; tt < rows; ++tt) {
          const Eigen::Index s = tt + k - off;
          if (s < 0 || s >= rows) continue;
          dw.row(k) += g.row(tt).cwiseProduct(x_val.row(s));
        }
    }
    if (t.nodes_[static_cast<std::size_t>(ix)].track) {
      Eigen::MatrixXd& dx = t.grad_ref(ix);
      for (Eigen::Index tt = 0; tt < rows; ++tt)
        for (Eigen::Index k = 0; k < taps; ++k) {
          const Eigen::Index s = tt + k - off;
          if (s < 0 || s >= rows) continue;
          dx.row(s) += g.row(tt).cwiseProduct(w_val.row(k));
        }
    }
  });
}

Var Tape::attn_bias(Var scores, Var bias_row, int window) {
  const auto& vs = value(scores);
  const auto& vb = value(bias_row);
  require(vs.rows() == vs.cols(), ErrorKind::dimension_mismatch, "attn_bias: scores not square");
  require(vb.rows() == 1 && vb.cols() == 2 * window + 1, ErrorKind::dimension_mismatch,
          "attn_bias: bias row must be 1 x (2*window+1)");
  const Eigen::Index n = vs.rows();
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const Eigen::Index r = i - j;
      out(i, j) = (std::abs(r) <= window) ? vs(i, j) + vb(0, r + window) : -1e30;
    }
  const int is = scores.id, ib = bias_row.id;
  return push_op(std::move(out), {scores, bias_row}, [is, ib, window](Tape& t, int out_id) {
    const Eigen::MatrixXd& g = t.grad_of(out_id);
    const Eigen::Index n = g.rows();
    const bool track_s = t.nodes_[static_cast<std::size_t>(is)].track;
    const bool track_b = t.nodes_[static_cast<std::size_t>(ib)].track;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = std::max<Eigen::Index>(0, i - window);
           j <= std::min<Eigen::Index>(n - 1, i + window); ++j) {
        if (track_s) t.grad_ref(is)(i, j) += g(i, j);
        if (track_b) t.grad_ref(ib)(0, i - j + window) += g(i, j);
      }
  });
}

Var Tape::lincomb(Var weights_row, const std::vector<Eigen::MatrixXd>& layers) {
  const auto& vw = value(weights_row);
  require(vw.rows() == 1 && vw.cols() == static_cast<Eigen::Index>(layers.size()),
          ErrorKind::dimension_mismatch, "lincomb: weight count must match layer count");
  require(!layers.empty(), ErrorKind::invalid_argument, "lincomb: no layers");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(layers[0].rows(), layers[0].cols());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    check_same_shape(layers[0], layers[l], "lincomb");
    out += vw(0, static_cast<Eigen::Index>(l)) * layers[l];
  }
  const int iw = weights_row.id;
  return push_op(std::move(out), {weights_row}, [iw, layers](Tape& t, int out_id) {
    if (!t.nodes_[static_cast<std::size_t>(iw)].track) return;
    const Eigen::MatrixXd& g = t.grad_of(out_id);
    Eigen::MatrixXd& dw = t.grad_ref(iw);
    for (std::size_t l = 0; l < layers.size(); ++l)
      dw(0, static_cast<Eigen::Index>(l)) += g.cwiseProduct(layers[l]).sum();
  });
}

Var Tape::flatten_rows(Var a) {
  const auto& va = value(a);
  const Eigen::Index rows = va.rows(), cols = va.cols();
  Eigen::MatrixXd out(rows * cols, 1);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) out(r * cols + c, 0) = va(r, c);
  const int ia = a.id;
  return push_op(std::move(out), {a}, [ia, rows, cols](Tape& t, int out_id) {
    if (!t.nodes_[static_cast<std::size_t>(ia)].track) return;
    const Eigen::MatrixXd& g = t.grad_of(out_id);
    Eigen::MatrixXd& da = t.grad_ref(ia);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) da(r, c) += g(r * cols + c, 0);
  });
}

Var Tape::reshape_row(Var a, int rows, int cols) {
  const auto& va = value(a);
  require(va.rows() == 1 && va.cols() == static_cast<Eigen::Index>(rows) * cols,
          ErrorKind::dimension_mismatch, "reshape_row: size mismatch");
  Eigen::MatrixXd out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out(r, c) = va(0, r * cols + c);
  const int ia = a.id;
  return push_op(std::move(out), {a}, [ia, rows, cols](Tape& t, int out_id) {
    if (!t.nodes_[static_cast<std::size_t>(ia)].track) return;
    const Eigen::MatrixXd& g = t.grad_of(out_id);
    Eigen::MatrixXd& da = t.grad_ref(ia);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) da(0, r * cols + c) += g(r, c);
  });
}

Var Tape::gather_rows(Var a, const std::vector<int>& indices) {
  const auto& va = value(a);
  require(!indices.empty(), ErrorKind::invalid_argument, "gather_rows: empty index list");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(indices.size()), va.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] >= 0 && indices[i] < va.rows(), ErrorKind::invalid_argument,
            "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = va.row(indices[i]);
  }
  const int ia = a.id;
  return push_op(std::move(out), {a}, [ia, indices](Tape& t, int out_id) {
    if (!t.nodes_[static_cast<std::size_t>(ia)].track) return;
    const Eigen::MatrixXd& g = t.grad_of(out_id);
    Eigen::MatrixXd& da = t.grad_ref(ia);
    for (std::size_t i = 0; i < indices.size(); ++i)
      da.row(indices[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var Tape::downsample_pairs(Var a) {
  const auto& va = value(a);
  const Eigen::Index t50 = va.rows();
  require(t50 >= 1, ErrorKind::invalid_argument, "downsample_pairs: empty input");
  const Eigen::Index t25 = (t50 + 1) / 2;
  Eigen::MatrixXd out(t25, va.cols());
  for (Eigen::Index t = 0; t < t25; ++t) {
    const Eigen::Index b = std::min(2 * t + 1, t50 - 1);
    out.row(t) = 0.5 * (va.row(2 * t) + va.row(b));
  }
  const int ia = a.id;
  return push_op(std::move(out), {a}, [ia, t50, t25](Tape& t, int out_id) {
    if (!t.nodes_[static_cast<std::size_t>(ia)].track) return;
    const Eigen::MatrixXd& g = t.grad_of(out_id);
    Eigen::MatrixXd& da = t.grad_ref(ia);
    for (Eigen::Index r = 0; r < t25; ++r) {
      const Eigen::Index b = std::min(2 * r + 1, t50 - 1);
      da.row(2 * r) += 0.5 * g.row(r);
      da.row(b) += 0.5 * g.row(r);
    }
  });
}

Var Tape::sum_all(Var a) {
  const int ia = a.id;
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = value(a).sum();
  return push_op(std::move(out), {a}, [ia](Tape& t, int out_id) {
    if (!t.nodes_[static_cast<std::size_t>(ia)].track) return;
    t.grad_ref(ia).array() += t.grad_of(out_id)(0, 0);
  });
}

Var Tape::mean_all(Var a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(value(a).size()));
}

Var Tape::mse(Var a, Var b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  check_same_shape(va, vb, "mse");
  const double n = static_cast<double>(va.size());
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = (va - vb).squaredNorm() / n;
  const int ia = a.id, ib = b.id;
  return push_op(std::move(out), {a, b}, [ia, ib, n](Tape& t, int out_id) {
    const double g = t.grad_of(out_id)(0, 0);
    const Eigen::MatrixXd diff = t.value_of(ia) - t.value_of(ib);
    if (t.nodes_[static_cast<std::size_t>(ia)].track) t.grad_ref(ia) += (2.0 * g / n) * diff;
    if (t.nodes_[static_cast<std::size_t>(ib)].track) t.grad_ref(ib) -= (2.0 * g / n) * diff;
  });
}

Var Tape::huber_sum_all(Var a, Var b, double delta) {
  const auto& va = value(a);
  const auto& vb = value(b);
  check_same_shape(va, vb, "huber_sum_all");
  double total = 0.0;
  for (Eigen::Index i = 0; i < va.size(); ++i)
    total += losses::huber_scalar(va(i) - vb(i), delta);
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = total;
  const int ia = a.id, ib = b.id;
  return push_op(std::move(out), {a, b}, [ia, ib, delta](Tape& t, int out_id) {
    const double g = t.grad_of(out_id)(0, 0);
    const Eigen::MatrixXd& va = t.value_of(ia);
    const Eigen::MatrixXd& vb = t.value_of(ib);
    Eigen::MatrixXd d(va.rows(), va.cols());
    for (Eigen::Index i = 0; i < va.size(); ++i)
      d(i) = losses::huber_scalar_grad(va(i) - vb(i), delta);
    if (t.nodes_[static_cast<std::size_t>(ia)].track) t.grad_ref(ia) += g * d;
    if (t.nodes_[static_cast<std::size_t>(ib)].track) t.grad_ref(ib) -= g * d;
  });
}

Var Tape::abs_mean(Var a) {
  const auto& va = value(a);
  const double n = static_cast<double>(va.size());
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = va.cwiseAbs().sum() / n;
  const int ia = a.id;
  return push_op(std::move(out), {a}, [ia, n](Tape& t, int out_id) {
    if (!t.nodes_[static_cast<std::size_t>(ia)].track) return;
    const double g = t.grad_of(out_id)(0, 0);
    t.grad_ref(ia) += (g / n) * t.value_of(ia).cwiseSign();
  });
}

Var Tape::pairwise_floor_hinge(Var x, double floor_dist) {
  const auto& vx = value(x);
  const int k = static_cast<int>(vx.rows());
  require(k >= 2, ErrorKind::invalid_argument, "pairwise_floor_hinge: need at least two rows");
  const double pairs = static_cast<double>(k) * (k - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j)
      total += std::max(0.0, floor_dist - (vx.row(i) - vx.row(j)).norm());
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = total / pairs;
  const int ix = x.id;
  return push_op(std::move(out), {x}, [ix, floor_dist, k, pairs](Tape& t, int out_id) {
    if (!t.nodes_[static_cast<std::size_t>(ix)].track) return;
    const double g = t.grad_of(out_id)(0, 0) / pairs;
    const Eigen::MatrixXd& vx = t.value_of(ix);
    Eigen::MatrixXd& dx = t.grad_ref(ix);
    for (int i = 0; i < k; ++i)
      for (int j = i + 1; j < k; ++j) {
        const Eigen::RowVector3d diff = vx.row(i) - vx.row(j);
        const double d = diff.norm();
        if (d >= floor_dist || d < 1e-12) continue;
        const Eigen::RowVector3d dir = diff / d;
        dx.row(i) -= g * dir;
        dx.row(j) += g * dir;
      }
  });
}

Var Tape::compose_euler(Var canonical, Var euler, Var delta, Var t) {
  const auto& vc = value(canonical);
  const auto& ve = value(euler);
  const auto& vd = value(delta);
  const auto& vt = value(t);
  require(ve.rows() == 1 && ve.cols() == 3, ErrorKind::dimension_mismatch,
          "compose_euler: euler must be 1 x 3");
  require(vt.rows() == 1 && vt.cols() == 3, ErrorKind::dimension_mismatch,
          "compose_euler: translation must be 1 x 3");
  check_same_shape(vc, vd, "compose_euler");
  const kp::Rotation rot = kp::Rotation::from_euler(ve(0, 0), ve(0, 1), ve(0, 2));
  Eigen::Matrix3d jac[3];
  kp::Rotation::euler_jacobian(ve(0, 0), ve(0, 1), ve(0, 2), jac);
  Eigen::MatrixXd out = vc * rot.matrix() + vd;
  out.rowwise() += vt.row(0);
  const int ic = canonical.id, ie = euler.id, id = delta.id, it = t.id;
  const Eigen::Matrix3d m = rot.matrix();
  const Eigen::Matrix3d j0 = jac[0], j1 = jac[1], j2 = jac[2];
  return push_op(std::move(out), {canonical, euler, delta, t},
                 [ic, ie, id, it, m, j0, j1, j2](Tape& tp, int out_id) {
                   const Eigen::MatrixXd& g = tp.grad_of(out_id);
                   const Eigen::MatrixXd& vc = tp.value_of(ic);
                   if (tp.nodes_[static_cast<std::size_t>(ic)].track)
                     tp.grad_ref(ic) += g * m.transpose();
                   if (tp.nodes_[static_cast<std::size_t>(ie)].track) {
                     Eigen::MatrixXd& de = tp.grad_ref(ie);
                     de(0, 0) += g.cwiseProduct(vc * j0).sum();
                     de(0, 1) += g.cwiseProduct(vc * j1).sum();
                     de(0, 2) += g.cwiseProduct(vc * j2).sum();
                   }
                   if (tp.nodes_[static_cast<std::size_t>(id)].track) tp.grad_ref(id) += g;
                   if (tp.nodes_[static_cast<std::size_t>(it)].track)
                     tp.grad_ref(it) += g.colwise().sum();
                 });
}

Var Tape::similarity_xy(Var x, const Eigen::Matrix2d& m) {
  const auto& vx = value(x);
  require(vx.cols() == 3, ErrorKind::dimension_mismatch, "similarity_xy: expected K x 3");
  Eigen::MatrixXd out = vx;
  out.leftCols<2>() = vx.leftCols<2>() * m.transpose();
  const int ix = x.id;
  return push_op(std::move(out), {x}, [ix, m](Tape& t, int out_id) {
    if (!t.nodes_[static_cast<std::size_t>(ix)].track) return;
    const Eigen::MatrixXd& g = t.grad_of(out_id);
    Eigen::MatrixXd& dx = t.grad_ref(ix);
    dx.leftCols<2>() += g.leftCols<2>() * m;
    dx.col(2) += g.col(2);
  });
}

int ParamStore::add(std::string name, Eigen::MatrixXd value) {
  entries_.push_back({std::move(name), std::move(value)});
  return static_cast<int>(entries_.size()) - 1;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t total = 0;
  for (const auto& e : entries_) total += static_cast<std::size_t>(e.value.size());
  return total;
}

Eigen::VectorXd ParamStore::flatten() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(scalar_count()));
  Eigen::Index at = 0;
  for (const auto& e : entries_) {
    out.segment(at, e.value.size()) = Eigen::Map<const Eigen::VectorXd>(e.value.data(),
                                                                        e.value.size());
    at += e.value.size();
  }
  return out;
}

void ParamStore::unflatten(const Eigen::VectorXd& values) {
  require(values.size() == static_cast<Eigen::Index>(scalar_count()),
          ErrorKind::dimension_mismatch, "unflatten: size mismatch");
  Eigen::Index at = 0;
  for (auto& e : entries_) {
    Eigen::Map<Eigen::VectorXd>(e.value.data(), e.value.size()) =
        values.segment(at, e.value.size());
    at += e.value.size();
  }
}

void SgdMomentum::step(ParamStore& params, const std::vector<Eigen::MatrixXd>& grads) {
  require(static_cast<int>(grads.size()) == params.size(), ErrorKind::dimension_mismatch,
          "optimizer: gradient count does not match parameters");
  if (velocity_.empty()) {
    velocity_.reserve(grads.size());
    for (int i = 0; i < params.size(); ++i)
      velocity_.push_back(Eigen::MatrixXd::Zero(params.at(i).rows(), params.at(i).cols()));
  }
  for (int i = 0; i < params.size(); ++i) {
    require(grads[static_cast<std::size_t>(i)].allFinite(), ErrorKind::numeric,
            "optimizer: non-finite gradient for " + params.name(i));
    velocity_[static_cast<std::size_t>(i)] =
        momentum_ * velocity_[static_cast<std::size_t>(i)] -
        lr_ * grads[static_cast<std::size_t>(i)];
    params.at(i) += velocity_[static_cast<std::size_t>(i)];
  }
}

}  // namespace takin::ad
