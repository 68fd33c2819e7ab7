#pragma once

// Dense 64-bit tensors with a dynamic reverse-mode trace.
//
// Every op returns a fresh Tensor. When any operand requires a gradient the
// result records its parents and a backward closure; the trace is rebuilt on
// every forward pass and released when the last handle to the loss goes away.
// Gradients accumulate across uses of a tensor; callers zero them between
// optimizer steps.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mtdoc {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Node;
struct Access;
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;
  // Extents of a rank-2 tensor.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Direct write access; meant for initialization and the optimizer.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  // Allocates the accumulator if needed and fills it with zeros.
  void zero_grad();
  // Drops the accumulator entirely.
  void clear_grad();

  // Copy of the values with no trace attached.
  Tensor detach() const;

  // Identity of the underlying storage (two handles may share it).
  const void* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
  friend struct detail::Access;
};

// ---------------------------------------------------------------- arithmetic

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// x[m x n] + bias[n] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// Sum of scalars (or same-shape tensors), accumulated left to right.
Tensor add_n(std::span<const Tensor> terms);

Tensor matmul(const Tensor& a, const Tensor& b);
// a[m x k] times the transpose of b[n x k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor gelu(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ------------------------------------------------------------- normalization

// Stable softmax along `axis`; negative axes count from the back.
Tensor softmax(const Tensor& x, int axis = -1);

inline constexpr double kLayerNormEps = 1e-5;
// Normalizes each row over the last extent, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);

enum class Reduction { mean, sum };
// Negative log-likelihood of `targets` under softmax(logits), per row.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                     Reduction reduction = Reduction::mean);

// ------------------------------------------------------------------- shaping

// Rows of table[v x d] selected by index.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);

// ----------------------------------------------------------------- attention

inline constexpr double kMaskBias = -1e9;

// Dense nq x nk attendability matrix; 1 = the query may attend the key.
struct AttentionMask {
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<std::uint8_t> allowed;

  static AttentionMask full(std::size_t queries, std::size_t keys);
  static AttentionMask key_padding(std::size_t queries, std::span<const std::uint8_t> key_valid);
  // Query i sees keys 0..i, intersected with key_valid when given.
  static AttentionMask causal(std::size_t n, std::span<const std::uint8_t> key_valid = {});

  bool allows(std::size_t q, std::size_t k) const { return allowed[q * keys + k] != 0; }
  std::vector<std::size_t> fully_masked_rows() const;
};

// Optional observer filled by scaled_dot_attention.
struct AttentionProbe {
  std::size_t heads = 0;
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<double> weights;  // heads x queries x keys
  std::vector<std::size_t> degenerate_rows;  // queries whose keys were all masked

  double weight(std::size_t h, std::size_t q, std::size_t k) const {
    return weights[(h * queries + q) * keys + k];
  }
};

// Per head: softmax(Q_h K_h^T / sqrt(d/h) + mask_bias) V_h, heads concatenated
// along columns. Masked entries get kMaskBias, so a fully masked row becomes
// uniform over its keys.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionMask& mask, std::size_t heads,
                            AttentionProbe* probe = nullptr);

// ------------------------------------------------------------------ autodiff

// While alive on this thread, ops record no trace (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool active();
};

// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every reachable
// tensor that requires them. The loss must hold a single element.
void backward(const Tensor& loss);

// Throws NumericError naming `what` if any value is NaN or infinite.
void check_finite(std::span<const double> values, const std::string& what);

}  // namespace mtdoc
