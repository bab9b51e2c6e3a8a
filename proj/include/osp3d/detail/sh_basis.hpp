#pragma once

// Real spherical-harmonic basis (3DGS sign convention) up to degree 3, with
// optional partial derivatives with respect to the unit direction.

namespace osp3d::detail {

inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;
inline constexpr double kShC2[5] = {1.0925484305920792, -1.0925484305920792,
                                    0.31539156525252005, -1.0925484305920792,
                                    0.5462742152960396};
inline constexpr double kShC3[7] = {-0.5900435899266435, 2.890611442640554,
                                    -0.4570457994644658, 0.3731763325901154,
                                    -0.4570457994644658, 1.445305721320277,
                                    -0.5900435899266435};

// out[b] = Y_b(x, y, z). grad (nullable) receives dY_b/d(x,y,z) at
// grad[3*b + {0,1,2}].
template <class T>
void sh_basis_eval(int degree, T x, T y, T z, T* out, T* grad) {
  auto set = [&](int b, T v, T gx, T gy, T gz) {
    out[b] = v;
    if (grad) {
      grad[3 * b] = gx;
      grad[3 * b + 1] = gy;
      grad[3 * b + 2] = gz;
    }
  };
  const T c0 = T(kShC0), c1 = T(kShC1);
  set(0, c0, T(0), T(0), T(0));
  if (degree < 1) return;
  set(1, -c1 * y, T(0), -c1, T(0));
  set(2, c1 * z, T(0), T(0), c1);
  set(3, -c1 * x, -c1, T(0), T(0));
  if (degree < 2) return;
  const T xx = x * x, yy = y * y, zz = z * z;
  const T xy = x * y, yz = y * z, xz = x * z;
  {
    const T a = T(kShC2[0]), b = T(kShC2[1]), c = T(kShC2[2]), d = T(kShC2[3]),
            e = T(kShC2[4]);
    set(4, a * xy, a * y, a * x, T(0));
    set(5, b * yz, T(0), b * z, b * y);
    set(6, c * (T(2) * zz - xx - yy), c * T(-2) * x, c * T(-2) * y, c * T(4) * z);
    set(7, d * xz, d * z, T(0), d * x);
    set(8, e * (xx - yy), e * T(2) * x, e * T(-2) * y, T(0));
  }
  if (degree < 3) return;
  {
    const T a = T(kShC3[0]), b = T(kShC3[1]), c = T(kShC3[2]), d = T(kShC3[3]),
            e = T(kShC3[4]), f = T(kShC3[5]), g = T(kShC3[6]);
    set(9, a * y * (T(3) * xx - yy), a * T(6) * xy, a * (T(3) * xx - T(3) * yy), T(0));
    set(10, b * xy * z, b * yz, b * xz, b * xy);
    set(11, c * y * (T(4) * zz - xx - yy), c * T(-2) * xy,
        c * (T(4) * zz - xx - T(3) * yy), c * T(8) * yz);
    set(12, d * z * (T(2) * zz - T(3) * xx - T(3) * yy), d * T(-6) * xz,
        d * T(-6) * yz, d * (T(6) * zz - T(3) * xx - T(3) * yy));
    set(13, e * x * (T(4) * zz - xx - yy), e * (T(4) * zz - T(3) * xx - yy),
        e * T(-2) * xy, e * T(8) * xz);
    set(14, f * z * (xx - yy), f * T(2) * xz, f * T(-2) * yz, f * (xx - yy));
    set(15, g * x * (xx - T(3) * yy), g * (T(3) * xx - T(3) * yy), g * T(-6) * xy, T(0));
  }
}

}  // namespace osp3d::detail
