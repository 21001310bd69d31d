#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "takin/common.hpp"

// Hand-written reverse-mode accumulation over a dynamically built graph of
// dense matrices. Each operation records a closure that scatters the output
// gradient to its parents; backward() replays them in reverse creation
// order. Finite differences (gradcheck) verify every op; they are never the
// training path.

namespace takin::ad {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  // Leaves. Parameters track gradients; constants do not.
  Var param(const Eigen::MatrixXd& value) { return push(value, true); }
  Var constant(const Eigen::MatrixXd& value) { return push(value, false); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var add_rowvec(Var a, Var bias);  // bias is 1 x cols, broadcast over rows
  Var mul(Var a, Var b);            // elementwise
  Var scale(Var a, double c);
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var tanh_of(Var a);
  // scales (constant row) ⊙ tanh(a), applied column-wise.
  Var tanh_scaled(Var a, const Eigen::RowVectorXd& scales);
  Var softmax_rows(Var a);
  Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_cols(Var a, int first, int count);
  // Depthwise temporal convolution over rows (time); weights k x d, centered
  // with zero padding, plus per-channel bias (1 x d).
  Var dwconv_time(Var x, Var weights, Var bias);
  // Adds bias(0, i-j+window) to scores(i, j) for |i-j| <= window and masks
  // everything farther away to -1e30 (local attention).
  Var attn_bias(Var scores, Var bias_row, int window);
  // Σ_l weights(0, l) · layers[l]; layers are constants.
  Var lincomb(Var weights_row, const std::vector<Eigen::MatrixXd>& layers);
  // Row-major flatten of an r x c matrix into an (r c) x 1 column.
  Var flatten_rows(Var a);
  // Row-major reshape of a 1 x (r c) row into r x c.
  Var reshape_row(Var a, int rows, int cols);
  // Selects rows by index (duplicates allowed).
  Var gather_rows(Var a, const std::vector<int>& indices);
  // 50 -> 25 Hz pair averaging over rows; odd tail row averages with itself.
  Var downsample_pairs(Var a);

  // Reductions to 1 x 1.
  Var sum_all(Var a);
  Var mean_all(Var a);
  Var mse(Var a, Var b);
  Var huber_sum_all(Var a, Var b, double delta);
  Var abs_mean(Var a);
  Var pairwise_floor_hinge(Var x, double floor_dist);  // x is K x 3

  // Keypoint composition x_c * R(euler) + delta + t with analytic rotation
  // jacobians. canonical/delta are K x 3, euler/t are 1 x 3.
  Var compose_euler(Var canonical, Var euler, Var delta, Var t);
  // Applies a constant 2x2 matrix to the xy columns, z passes through.
  Var similarity_xy(Var x, const Eigen::Matrix2d& m);

  void backward(Var loss);

  const Eigen::MatrixXd& value(Var v) const { return nodes_[check(v)].value; }
  // Zero matrix when the node never received gradient.
  Eigen::MatrixXd gradient(Var v) const;

  std::size_t node_count() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;  // empty until touched
    std::function<void(Tape&, int)> back;
    bool track = false;
  };

  Var push(Eigen::MatrixXd value, bool track);
  Var push_op(Eigen::MatrixXd value, std::initializer_list<Var> parents,
              std::function<void(Tape&, int)> back);
  int check(Var v) const;
  bool tracked(Var v) const { return nodes_[check(v)].track; }
  Eigen::MatrixXd& grad_ref(int id);
  const Eigen::MatrixXd& grad_of(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  const Eigen::MatrixXd& value_of(int id) const {
    return nodes_[static_cast<std::size_t>(id)].value;
  }

  std::vector<Node> nodes_;
};

// Named parameter registry shared by the trainable models; the entry order
// is the checkpoint serialization order.
class ParamStore {
 public:
  int add(std::string name, Eigen::MatrixXd value);

  Eigen::MatrixXd& at(int handle) { return entries_[static_cast<std::size_t>(handle)].value; }
  const Eigen::MatrixXd& at(int handle) const {
    return entries_[static_cast<std::size_t>(handle)].value;
  }
  const std::string& name(int handle) const {
    return entries_[static_cast<std::size_t>(handle)].name;
  }
  int size() const { return static_cast<int>(entries_.size()); }
  std::size_t scalar_count() const;

  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& values);

 private:
  struct Entry {
    std::string name;
    Eigen::MatrixXd value;
  };
  std::vector<Entry> entries_;
};

// Plain SGD with momentum 0.9; the only optimizer in the project.
class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum = 0.9)
      : lr_(learning_rate), momentum_(momentum) {}

  void step(ParamStore& params, const std::vector<Eigen::MatrixXd>& grads);

 private:
  double lr_;
  double momentum_;
  std::vector<Eigen::MatrixXd> velocity_;
};

}  // namespace takin::ad
