#include "normlab/tensor.hpp"

#include <cmath>
#include <cstring>

#include "normlab/errors.hpp"

namespace normlab {

std::string Tensor4::shape_str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

std::string FilterBank::shape_str() const {
  return "(" + std::to_string(oc) + "," + std::to_string(ic) + "," + std::to_string(kh) + "," +
         std::to_string(kw) + ")";
}

Tensor4 Tensor4::slice_n(int n0, int count) const {
  if (n0 < 0 || count < 0 || n0 + count > n) {
    throw UsageError("slice_n out of range: [" + std::to_string(n0) + "," +
                     std::to_string(n0 + count) + ") of n=" + std::to_string(n));
  }
  Tensor4 out(count, c, h, w);
  const size_t per_sample = static_cast<size_t>(c) * h * w;
  std::memcpy(out.data.data(), data.data() + static_cast<size_t>(n0) * per_sample,
              static_cast<size_t>(count) * per_sample * sizeof(double));
  return out;
}

bool Tensor4::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace normlab
