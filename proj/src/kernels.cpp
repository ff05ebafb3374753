#include "lvcov/kernels.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <string>

namespace lvcov {
namespace {

struct ConvGeometry {
  std::size_t in_d, in_h, in_w, cin;
  std::size_t cout, kd, kh, kw;
  std::size_t out_d, out_h, out_w;
  Extent3 stride;

  std::size_t row_len() const { return kw * cin; }
  std::size_t rows() const { return kd * kh; }
};

const char* axis_name(int axis) {
  switch (axis) {
    case 0: return "depth";
    case 1: return "height";
    case 2: return "width";
    default: return "channel";
  }
}

void check_stride(Extent3 stride) {
  if (stride.d == 0 || stride.h == 0 || stride.w == 0) throw DimensionError("stride components must be >= 1");
}

template <typename T>
ConvGeometry conv_geometry(const BasicTensor<T>& input, const BasicTensor<T>& kernels, Extent3 stride) {
  if (input.rank() != 4) throw DimensionError("conv3d input must be [D,H,W,C], got " + shape_string(input.shape()));
  if (kernels.rank() != 5) {
    throw DimensionError("conv3d kernels must be [Cout,Cin,KD,KH,KW], got " + shape_string(kernels.shape()));
  }
  check_stride(stride);
  ConvGeometry g{};
  g.in_d = input.extent(0);
  g.in_h = input.extent(1);
  g.in_w = input.extent(2);
  g.cin = input.extent(3);
  g.cout = kernels.extent(0);
  g.kd = kernels.extent(2);
  g.kh = kernels.extent(3);
  g.kw = kernels.extent(4);
  g.stride = stride;
  if (kernels.extent(1) != g.cin) {
    throw DimensionError(std::string("conv3d ") + axis_name(3) + " mismatch: input has " + std::to_string(g.cin) +
                         ", kernels expect " + std::to_string(kernels.extent(1)));
  }
  const std::size_t in[3] = {g.in_d, g.in_h, g.in_w};
  const std::size_t k[3] = {g.kd, g.kh, g.kw};
  for (int axis = 0; axis < 3; ++axis) {
    if (k[axis] > in[axis]) {
      throw DimensionError(std::string("conv3d kernel larger than input on ") + axis_name(axis) + " axis (" +
                           std::to_string(k[axis]) + " > " + std::to_string(in[axis]) + ")");
    }
  }
  g.out_d = window_output(g.in_d, g.kd, stride.d);
  g.out_h = window_output(g.in_h, g.kh, stride.h);
  g.out_w = window_output(g.in_w, g.kw, stride.w);
  return g;
}

// Kernels repacked as [KD][KH][KW][Cin][Cout] so that one (kd, kh) row of
// taps lines up with a contiguous run of KW*Cin input values.
template <typename T>
std::vector<T> pack_taps_major(const BasicTensor<T>& kernels, const ConvGeometry& g) {
  std::vector<T> packed(kernels.size());
  const T* src = kernels.data();
  const std::size_t taps = g.kd * g.kh * g.kw;
  for (std::size_t co = 0; co < g.cout; ++co) {
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      for (std::size_t t = 0; t < taps; ++t) {
        packed[(t * g.cin + ci) * g.cout + co] = src[(co * g.cin + ci) * taps + t];
      }
    }
  }
  return packed;
}

// Kernels repacked as [KD][KH][Cout][KW*Cin] for the input-gradient scatter.
template <typename T>
std::vector<T> pack_rows_by_output(const BasicTensor<T>& kernels, const ConvGeometry& g) {
  std::vector<T> packed(kernels.size());
  const T* src = kernels.data();
  const std::size_t taps = g.kd * g.kh * g.kw;
  const std::size_t len = g.row_len();
  for (std::size_t co = 0; co < g.cout; ++co) {
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t x = 0; x < g.kw; ++x) {
          packed[(r * g.cout + co) * len + x * g.cin + ci] = src[(co * g.cin + ci) * taps + r * g.kw + x];
        }
      }
    }
  }
  return packed;
}

// The (kd, kh) rows a tile visits: where each row starts in the input,
// relative to the tile origin, and which packed tap row it multiplies.
struct TapRows {
  std::vector<std::size_t> input_offset;
  std::vector<std::size_t> tap_row;

  std::size_t size() const { return input_offset.size(); }
};

TapRows all_rows(const ConvGeometry& g) {
  TapRows rows;
  for (std::size_t d = 0; d < g.kd; ++d) {
    for (std::size_t h = 0; h < g.kh; ++h) {
      rows.input_offset.push_back(((d * g.in_h + h) * g.in_w) * g.cin);
      rows.tap_row.push_back(d * g.kh + h);
    }
  }
  return rows;
}

constexpr std::size_t kChannelBlock = 16;

// 64-byte GCC vector; lowered to narrower registers on targets without AVX-512.
template <typename T>
struct Simd {
  static constexpr std::size_t lanes = 64 / sizeof(T);
  typedef T type __attribute__((vector_size(64)));

  static type load(const T* p) {
    type v;
    std::memcpy(&v, p, sizeof v);
    return v;
  }
  static void store(T* p, type v) { std::memcpy(p, &v, sizeof v); }
};

// P consecutive output positions times one block of kChannelBlock output
// channels, accumulated in vector registers.
template <typename T, std::size_t P>
inline void conv_tile(const T* in_base, std::size_t pos_step, const T* taps, std::size_t cout, const TapRows& rows,
                      std::size_t row_len, const T* bias, T* out, std::size_t out_pos_step) {
  using S = Simd<T>;
  using V = typename S::type;
  constexpr std::size_t VB = kChannelBlock / S::lanes;
  V acc[P][VB];
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t v = 0; v < VB; ++v) acc[p][v] = S::load(bias + v * S::lanes);
  }
  const std::size_t row_stride = row_len * cout;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const T* x = in_base + rows.input_offset[r];
    const T* k = taps + rows.tap_row[r] * row_stride;
    for (std::size_t j = 0; j < row_len; ++j) {
      V kv[VB];
      for (std::size_t v = 0; v < VB; ++v) kv[v] = S::load(k + j * cout + v * S::lanes);
      for (std::size_t p = 0; p < P; ++p) {
        const T xv = x[p * pos_step + j];
        for (std::size_t v = 0; v < VB; ++v) acc[p][v] += xv * kv[v];
      }
    }
  }
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t v = 0; v < VB; ++v) S::store(out + p * out_pos_step + v * S::lanes, acc[p][v]);
  }
}

template <typename T>
void conv_tile_generic(const T* in_base, const T* taps, std::size_t cout, const TapRows& rows, std::size_t row_len,
                       const T* bias, T* out) {
  for (std::size_t c = 0; c < cout; ++c) out[c] = bias[c];
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const T* x = in_base + rows.input_offset[r];
    const T* k = taps + rows.tap_row[r] * row_len * cout;
    for (std::size_t j = 0; j < row_len; ++j) {
      const T xv = x[j];
      for (std::size_t c = 0; c < cout; ++c) out[c] += xv * k[j * cout + c];
    }
  }
}

// One output row of out_w positions.
template <typename T>
void conv_output_row(const T* row_base, std::size_t pos_step, const T* taps, std::size_t cout, const TapRows& rows,
                     std::size_t row_len, const T* bias, T* out_row, std::size_t out_w) {
  if (cout % kChannelBlock != 0) {
    for (std::size_t ow = 0; ow < out_w; ++ow) {
      conv_tile_generic(row_base + ow * pos_step, taps, cout, rows, row_len, bias, out_row + ow * cout);
    }
    return;
  }
  auto run = [&]<std::size_t P>(std::size_t ow) {
    for (std::size_t cb = 0; cb < cout; cb += kChannelBlock) {
      conv_tile<T, P>(row_base + ow * pos_step, pos_step, taps + cb, cout, rows, row_len, bias + cb,
                      out_row + ow * cout + cb, cout);
    }
  };
  std::size_t ow = 0;
  for (; ow + 8 <= out_w; ow += 8) run.template operator()<8>(ow);
  if (ow + 4 <= out_w) run.template operator()<4>(ow), ow += 4;
  if (ow + 2 <= out_w) run.template operator()<2>(ow), ow += 2;
  if (ow < out_w) run.template operator()<1>(ow);
}

// Kernel-gradient accumulation over P positions. With blocked channels the
// upstream gradients of the tile stay in registers across all taps.
template <typename T, std::size_t P>
inline void kernel_grad_tile(const T* in_base, std::size_t pos_step, const T* gout, std::size_t cout,
                             const TapRows& rows, std::size_t row_len, T* grad_taps) {
  using S = Simd<T>;
  using V = typename S::type;
  constexpr std::size_t VB = kChannelBlock / S::lanes;
  const std::size_t row_stride = row_len * cout;
  if (cout % kChannelBlock == 0) {
    for (std::size_t cb = 0; cb < cout; cb += kChannelBlock) {
      V go[P][VB];
      for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t v = 0; v < VB; ++v) go[p][v] = S::load(gout + p * cout + cb + v * S::lanes);
      }
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const T* x = in_base + rows.input_offset[r];
        T* g = grad_taps + rows.tap_row[r] * row_stride + cb;
        for (std::size_t j = 0; j < row_len; ++j) {
          V s[VB];
          for (std::size_t v = 0; v < VB; ++v) s[v] = S::load(g + j * cout + v * S::lanes);
          for (std::size_t p = 0; p < P; ++p) {
            const T xv = x[p * pos_step + j];
            for (std::size_t v = 0; v < VB; ++v) s[v] += xv * go[p][v];
          }
          for (std::size_t v = 0; v < VB; ++v) S::store(g + j * cout + v * S::lanes, s[v]);
        }
      }
    }
    return;
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const T* x = in_base + rows.input_offset[r];
    T* g = grad_taps + rows.tap_row[r] * row_stride;
    for (std::size_t j = 0; j < row_len; ++j) {
      T* gv = g + j * cout;
      for (std::size_t c = 0; c < cout; ++c) {
        T s = gv[c];
        for (std::size_t p = 0; p < P; ++p) s += x[p * pos_step + j] * gout[p * cout + c];
        gv[c] = s;
      }
    }
  }
}

// Scatters one output position's upstream gradient into a row of KW*Cin
// input gradients: gin[j] += sum_co go[co] * k[co][j].
template <typename T>
inline void input_grad_row(T* gin, const T* go, const T* k, std::size_t cout, std::size_t len) {
  using S = Simd<T>;
  using V = typename S::type;
  std::size_t j = 0;
  for (; j + 2 * S::lanes <= len; j += 2 * S::lanes) {
    V a0 = S::load(gin + j);
    V a1 = S::load(gin + j + S::lanes);
    for (std::size_t co = 0; co < cout; ++co) {
      a0 += go[co] * S::load(k + co * len + j);
      a1 += go[co] * S::load(k + co * len + j + S::lanes);
    }
    S::store(gin + j, a0);
    S::store(gin + j + S::lanes, a1);
  }
  for (; j + S::lanes <= len; j += S::lanes) {
    V a = S::load(gin + j);
    for (std::size_t co = 0; co < cout; ++co) a += go[co] * S::load(k + co * len + j);
    S::store(gin + j, a);
  }
  for (; j < len; ++j) {
    T a = gin[j];
    for (std::size_t co = 0; co < cout; ++co) a += go[co] * k[co * len + j];
    gin[j] = a;
  }
}

// For unit stride the input gradient is a correlation of the zero-padded
// upstream gradient with the flipped, channel-swapped kernels. Rows that lie
// entirely in the depth/height padding are skipped.
template <typename T>
BasicTensor<T> full_correlation_input_grad(const BasicTensor<T>& grad_out, const BasicTensor<T>& kernels,
                                           const ConvGeometry& g) {
  const std::size_t pw = g.kw - 1;
  const std::size_t padded_w = g.out_w + 2 * pw;
  // Only the width axis is materialized with padding; depth and height
  // padding rows are never read.
  BasicTensor<T> padded({g.out_d, g.out_h, padded_w, g.cout});
  for (std::size_t d = 0; d < g.out_d; ++d) {
    for (std::size_t h = 0; h < g.out_h; ++h) {
      const T* src = grad_out.data() + ((d * g.out_h + h) * g.out_w) * g.cout;
      T* dst = padded.data() + ((d * g.out_h + h) * padded_w + pw) * g.cout;
      std::memcpy(dst, src, g.out_w * g.cout * sizeof(T));
    }
  }
  // Swapped geometry: the "input" is padded grad_out (cout channels), the
  // "output" is grad_input (cin channels).
  ConvGeometry t{};
  t.cin = g.cout;
  t.cout = g.cin;
  t.kd = g.kd;
  t.kh = g.kh;
  t.kw = g.kw;
  t.in_h = g.out_h;
  t.in_w = padded_w;
  BasicTensor<T> flipped({g.cin, g.cout, g.kd, g.kh, g.kw});
  for (std::size_t co = 0; co < g.cout; ++co) {
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      for (std::size_t a = 0; a < g.kd; ++a) {
        for (std::size_t b = 0; b < g.kh; ++b) {
          for (std::size_t c = 0; c < g.kw; ++c) {
            flipped.at({ci, co, g.kd - 1 - a, g.kh - 1 - b, g.kw - 1 - c}) = kernels.at({co, ci, a, b, c});
          }
        }
      }
    }
  }
  const std::vector<T> taps = pack_taps_major(flipped, t);
  const std::vector<T> zero_bias(g.cin, T{0});
  const std::size_t len = t.row_len();

  BasicTensor<T> grad_in({g.in_d, g.in_h, g.in_w, g.cin});
  TapRows rows;
  for (std::size_t id = 0; id < g.in_d; ++id) {
    for (std::size_t ih = 0; ih < g.in_h; ++ih) {
      // Flipped tap (a, b) reads grad_out at depth id + a - (kd - 1), height ih + b - (kh - 1).
      rows.input_offset.clear();
      rows.tap_row.clear();
      for (std::size_t a = 0; a < g.kd; ++a) {
        if (id + a < g.kd - 1 || id + a - (g.kd - 1) >= g.out_d) continue;
        const std::size_t d = id + a - (g.kd - 1);
        for (std::size_t b = 0; b < g.kh; ++b) {
          if (ih + b < g.kh - 1 || ih + b - (g.kh - 1) >= g.out_h) continue;
          const std::size_t h = ih + b - (g.kh - 1);
          rows.input_offset.push_back(((d * g.out_h + h) * padded_w) * g.cout);
          rows.tap_row.push_back(a * g.kh + b);
        }
      }
      conv_output_row(padded.data(), g.cout, taps.data(), g.cin, rows, len, zero_bias.data(),
                      grad_in.data() + ((id * g.in_h + ih) * g.in_w) * g.cin, g.in_w);
    }
  }
  return grad_in;
}

}  // namespace

std::size_t window_output(std::size_t input, std::size_t window, std::size_t stride) {
  if (stride == 0) throw DimensionError("stride must be >= 1");
  if (window == 0 || window > input) {
    throw DimensionError("window " + std::to_string(window) + " does not fit input extent " + std::to_string(input));
  }
  return (input - window) / stride + 1;
}

template <typename T>
BasicTensor<T> conv3d_forward(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const BasicTensor<T>& bias,
                              Extent3 stride) {
  const ConvGeometry g = conv_geometry(input, kernels, stride);
  if (bias.size() != g.cout) {
    throw DimensionError("conv3d bias has " + std::to_string(bias.size()) + " entries, expected " +
                         std::to_string(g.cout));
  }
  BasicTensor<T> output({g.out_d, g.out_h, g.out_w, g.cout});
  const std::vector<T> taps = pack_taps_major(kernels, g);
  const TapRows rows = all_rows(g);
  const std::size_t pos_step = stride.w * g.cin;
  for (std::size_t od = 0; od < g.out_d; ++od) {
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      const T* row_base = input.data() + ((od * stride.d * g.in_h + oh * stride.h) * g.in_w) * g.cin;
      conv_output_row(row_base, pos_step, taps.data(), g.cout, rows, g.row_len(), bias.data(),
                      output.data() + ((od * g.out_h + oh) * g.out_w) * g.cout, g.out_w);
    }
  }
  return output;
}

template <typename T>
ConvGradients<T> conv3d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                                 const BasicTensor<T>& kernels, Extent3 stride, bool want_input_grad) {
  const ConvGeometry g = conv_geometry(input, kernels, stride);
  const Shape expected{g.out_d, g.out_h, g.out_w, g.cout};
  if (grad_out.shape() != expected) {
    throw DimensionError("conv3d grad_out shape " + shape_string(grad_out.shape()) + " does not match forward output " +
                         shape_string(expected));
  }
  ConvGradients<T> grads;
  grads.bias = BasicTensor<T>({g.cout});
  const std::size_t positions = g.out_d * g.out_h * g.out_w;
  for (std::size_t pos = 0; pos < positions; ++pos) {
    const T* go = grad_out.data() + pos * g.cout;
    for (std::size_t c = 0; c < g.cout; ++c) grads.bias[c] += go[c];
  }

  const TapRows rows = all_rows(g);
  const std::size_t len = g.row_len();
  const std::size_t pos_step = stride.w * g.cin;

  // Kernel gradient, accumulated in taps-major layout then unpacked.
  std::vector<T> grad_taps(kernels.size(), T{0});
  for (std::size_t od = 0; od < g.out_d; ++od) {
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      const T* row_base = input.data() + ((od * stride.d * g.in_h + oh * stride.h) * g.in_w) * g.cin;
      const T* go_row = grad_out.data() + ((od * g.out_h + oh) * g.out_w) * g.cout;
      auto run = [&]<std::size_t P>(std::size_t ow) {
        kernel_grad_tile<T, P>(row_base + ow * pos_step, pos_step, go_row + ow * g.cout, g.cout, rows, len,
                               grad_taps.data());
      };
      std::size_t ow = 0;
      for (; ow + 8 <= g.out_w; ow += 8) run.template operator()<8>(ow);
      if (ow + 4 <= g.out_w) run.template operator()<4>(ow), ow += 4;
      if (ow + 2 <= g.out_w) run.template operator()<2>(ow), ow += 2;
      if (ow < g.out_w) run.template operator()<1>(ow);
    }
  }
  grads.kernels = BasicTensor<T>(kernels.shape());
  const std::size_t taps = g.kd * g.kh * g.kw;
  for (std::size_t co = 0; co < g.cout; ++co) {
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      for (std::size_t t = 0; t < taps; ++t) {
        grads.kernels[(co * g.cin + ci) * taps + t] = grad_taps[(t * g.cin + ci) * g.cout + co];
      }
    }
  }

  if (!want_input_grad) return grads;
  if (stride == Extent3{1, 1, 1} && g.cin % kChannelBlock == 0) {
    grads.input = full_correlation_input_grad(grad_out, kernels, g);
    return grads;
  }
  grads.input = BasicTensor<T>(input.shape());
  const std::vector<T> by_output = pack_rows_by_output(kernels, g);
  for (std::size_t od = 0; od < g.out_d; ++od) {
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      for (std::size_t ow = 0; ow < g.out_w; ++ow) {
        T* gin_base =
            grads.input.data() + ((od * stride.d * g.in_h + oh * stride.h) * g.in_w + ow * stride.w) * g.cin;
        const T* go = grad_out.data() + ((od * g.out_h + oh) * g.out_w + ow) * g.cout;
        for (std::size_t r = 0; r < rows.size(); ++r) {
          input_grad_row(gin_base + rows.input_offset[r], go, by_output.data() + rows.tap_row[r] * g.cout * len,
                         g.cout, len);
        }
      }
    }
  }
  return grads;
}

template <typename T>
PoolResult<T> maxpool3d_forward(const BasicTensor<T>& input, Extent3 window, Extent3 stride) {
  if (input.rank() != 4) throw DimensionError("maxpool3d input must be [D,H,W,C], got " + shape_string(input.shape()));
  check_stride(stride);
  const std::size_t in_d = input.extent(0), in_h = input.extent(1), in_w = input.extent(2), ch = input.extent(3);
  const std::size_t win[3] = {window.d, window.h, window.w};
  const std::size_t in[3] = {in_d, in_h, in_w};
  for (int axis = 0; axis < 3; ++axis) {
    if (win[axis] == 0 || win[axis] > in[axis]) {
      throw DimensionError(std::string("maxpool3d window larger than input on ") + axis_name(axis) + " axis (" +
                           std::to_string(win[axis]) + " > " + std::to_string(in[axis]) + ")");
    }
  }
  const std::size_t out_d = window_output(in_d, window.d, stride.d);
  const std::size_t out_h = window_output(in_h, window.h, stride.h);
  const std::size_t out_w = window_output(in_w, window.w, stride.w);

  PoolResult<T> result{BasicTensor<T>({out_d, out_h, out_w, ch}), {}};
  result.argmax.resize(result.output.size());
  const T* x = input.data();
  for (std::size_t od = 0; od < out_d; ++od) {
    for (std::size_t oh = 0; oh < out_h; ++oh) {
      for (std::size_t ow = 0; ow < out_w; ++ow) {
        const std::size_t out_base = ((od * out_h + oh) * out_w + ow) * ch;
        for (std::size_t c = 0; c < ch; ++c) {
          std::size_t best = ((od * stride.d * in_h + oh * stride.h) * in_w + ow * stride.w) * ch + c;
          T best_value = x[best];
          for (std::size_t kd = 0; kd < window.d; ++kd) {
            for (std::size_t kh = 0; kh < window.h; ++kh) {
              for (std::size_t kw = 0; kw < window.w; ++kw) {
                const std::size_t idx =
                    (((od * stride.d + kd) * in_h + oh * stride.h + kh) * in_w + ow * stride.w + kw) * ch + c;
                if (x[idx] > best_value) {
                  best_value = x[idx];
                  best = idx;
                }
              }
            }
          }
          result.output[out_base + c] = best_value;
          result.argmax[out_base + c] = best;
        }
      }
    }
  }
  return result;
}

template <typename T>
BasicTensor<T> maxpool3d_backward(const BasicTensor<T>& grad_out, std::span<const std::size_t> argmax,
                                  const Shape& input_shape) {
  if (argmax.size() != grad_out.size()) {
    throw DimensionError("maxpool3d argmax map has " + std::to_string(argmax.size()) + " entries for " +
                         std::to_string(grad_out.size()) + " gradients");
  }
  BasicTensor<T> grad_in(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] >= grad_in.size()) throw DimensionError("maxpool3d argmax index outside input shape");
    grad_in[argmax[i]] += grad_out[i];
  }
  return grad_in;
}

template <typename T>
void relu_inplace(BasicTensor<T>& x) {
  for (T& v : x.values()) v = v > T{0} ? v : T{0};
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad, const BasicTensor<T>& x) {
  if (grad.size() != x.size()) throw DimensionError("relu_backward size mismatch");
  BasicTensor<T> out(grad.shape());
  for (std::size_t i = 0; i < grad.size(); ++i) out[i] = x[i] > T{0} ? grad[i] : T{0};
  return out;
}

template <typename T>
T sigmoid(T z) {
  T a;
  if (z >= T{0}) {
    a = T{1} / (T{1} + std::exp(-z));
  } else {
    const T e = std::exp(z);
    a = e / (T{1} + e);
  }
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T{1} - std::numeric_limits<T>::epsilon() / 2;
  return a < lo ? lo : (a > hi ? hi : a);
}

template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& x, const BasicTensor<T>& weights, const BasicTensor<T>& bias) {
  if (weights.rank() != 2) throw DimensionError("dense weights must be [m,n], got " + shape_string(weights.shape()));
  const std::size_t m = weights.extent(0), n = weights.extent(1);
  if (x.size() != n) {
    throw DimensionError("dense input has " + std::to_string(x.size()) + " elements, weights expect " +
                         std::to_string(n));
  }
  if (bias.size() != m) {
    throw DimensionError("dense bias has " + std::to_string(bias.size()) + " entries, expected " + std::to_string(m));
  }
  BasicTensor<T> y({m});
  for (std::size_t i = 0; i < m; ++i) {
    const T* w = weights.data() + i * n;
    T acc = bias[i];
    for (std::size_t j = 0; j < n; ++j) acc += w[j] * x[j];
    y[i] = acc;
  }
  return y;
}

template <typename T>
DenseGradients<T> dense_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& x,
                                 const BasicTensor<T>& weights) {
  if (weights.rank() != 2) throw DimensionError("dense weights must be [m,n], got " + shape_string(weights.shape()));
  const std::size_t m = weights.extent(0), n = weights.extent(1);
  if (x.size() != n || grad_out.size() != m) {
    throw DimensionError("dense_backward: grad_out has " + std::to_string(grad_out.size()) + ", input has " +
                         std::to_string(x.size()) + " for weights " + shape_string(weights.shape()));
  }
  DenseGradients<T> grads{BasicTensor<T>(x.shape()), BasicTensor<T>({m, n}), BasicTensor<T>({m})};
  for (std::size_t i = 0; i < m; ++i) {
    const T gy = grad_out[i];
    const T* w = weights.data() + i * n;
    T* gw = grads.weights.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      gw[j] = gy * x[j];
      grads.input[j] += w[j] * gy;
    }
    grads.bias[i] = gy;
  }
  return grads;
}

template <typename T>
BasicTensor<T> dropout_mask(const Shape& shape, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  BasicTensor<T> mask(shape);
  const T keep_value = static_cast<T>(1.0 / (1.0 - rate));
  std::bernoulli_distribution keep(1.0 - rate);
  for (T& v : mask.values()) v = keep(rng) ? keep_value : T{0};
  return mask;
}

#define LVCOV_INSTANTIATE(T)                                                                                        \
  template BasicTensor<T> conv3d_forward<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,    \
                                            Extent3);                                                               \
  template ConvGradients<T> conv3d_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                               Extent3, bool);                                                      \
  template PoolResult<T> maxpool3d_forward<T>(const BasicTensor<T>&, Extent3, Extent3);                             \
  template BasicTensor<T> maxpool3d_backward<T>(const BasicTensor<T>&, std::span<const std::size_t>,                \
                                                const Shape&);                                                      \
  template void relu_inplace<T>(BasicTensor<T>&);                                                                   \
  template BasicTensor<T> relu_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template T sigmoid<T>(T);                                                                                         \
  template BasicTensor<T> dense_forward<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);    \
  template DenseGradients<T> dense_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> dropout_mask<T>(const Shape&, double, Rng&);
LVCOV_INSTANTIATE(float)
LVCOV_INSTANTIATE(double)
#undef LVCOV_INSTANTIATE

}  // namespace lvcov
