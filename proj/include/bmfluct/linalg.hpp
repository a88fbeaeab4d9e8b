#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <complex>

#include "bmfluct/error.hpp"

namespace bmfluct {

using cplx = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;

namespace detail {

template <class Mat>
double one_norm(const Mat& a) {
    return a.cwiseAbs().colwise().sum().maxCoeff();
}

// Pade numerator/denominator pieces for degree m in {3,5,7,9}.
template <class Mat, std::size_t N>
void pade_uv_low(const Mat& a, const std::array<double, N>& b, Mat& u, Mat& v) {
    const auto n = a.rows();
    const Mat ident = Mat::Identity(n, n);
    const Mat a2 = a * a;
    Mat power = ident;
    Mat u_acc = Mat::Zero(n, n);
    v = Mat::Zero(n, n);
    for (std::size_t j = 0; j + 1 < N; j += 2) {
        v += b[j] * power;
        u_acc += b[j + 1] * power;
        power = power * a2;
    }
    u = a * u_acc;
}

template <class Mat>
void pade_uv_13(const Mat& a, Mat& u, Mat& v) {
    static constexpr std::array<double, 14> b = {
        64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
        1187353796428800.0,  129060195264000.0,   10559470521600.0,
        670442572800.0,      33522128640.0,       1323241920.0,
        40840800.0,          960960.0,            16380.0,
        182.0,               1.0};
    const auto n = a.rows();
    const Mat ident = Mat::Identity(n, n);
    const Mat a2 = a * a;
    const Mat a4 = a2 * a2;
    const Mat a6 = a4 * a2;
    const Mat tmp_u = a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2);
    u = a * (tmp_u + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident);
    const Mat tmp_v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2);
    v = tmp_v + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident;
}

}  // namespace detail

/// Matrix exponential by scaling and squaring with Pade order chosen from
/// the 1-norm (degrees 3, 5, 7, 9, 13). Works for real and complex
/// dynamic-size Eigen matrices.
template <class Mat>
Mat expm(const Mat& a) {
    using detail::one_norm;
    const auto n = a.rows();
    if (n == 0) return a;
    const double norm = one_norm(a);
    if (!std::isfinite(norm)) throw NumericalError("expm: non-finite matrix");
    if (norm == 0.0) return Mat::Identity(n, n);

    Mat u, v;
    int squarings = 0;
    if (norm <= 1.495585217958292e-2) {
        detail::pade_uv_low(a, std::array<double, 4>{120.0, 60.0, 12.0, 1.0}, u, v);
    } else if (norm <= 2.539398330063230e-1) {
        detail::pade_uv_low(
            a, std::array<double, 6>{30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0}, u, v);
    } else if (norm <= 9.504178996162932e-1) {
        detail::pade_uv_low(a,
                            std::array<double, 8>{17297280.0, 8648640.0, 1995840.0,
                                                  277200.0, 25200.0, 1512.0, 56.0, 1.0},
                            u, v);
    } else if (norm <= 2.097847961257068) {
        detail::pade_uv_low(
            a,
            std::array<double, 10>{17643225600.0, 8821612800.0, 2075673600.0,
                                   302702400.0, 30270240.0, 2162160.0, 110880.0, 3960.0,
                                   90.0, 1.0},
            u, v);
    } else {
        constexpr double theta13 = 5.371920351148152;
        squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm / theta13))));
        const Mat scaled = a / std::ldexp(1.0, squarings);
        detail::pade_uv_13(scaled, u, v);
    }
    Mat result = (v - u).partialPivLu().solve(v + u);
    for (int i = 0; i < squarings; ++i) result = result * result;
    return result;
}

/// exp(t * a) applied to a vector.
inline CVec expm_apply(const CMat& a, double t, const CVec& f) {
    return expm(CMat(t * a)) * f;
}

inline CMat to_complex(const RMat& m) { return m.cast<cplx>(); }

/// Relative comparison helper used across validators.
inline bool close_rel(cplx a, cplx b, double rel, double abs_floor = 0.0) {
    return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

inline double factorial(int n) {
    double r = 1.0;
    for (int i = 2; i <= n; ++i) r *= i;
    return r;
}

inline double binomial(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

/// Falling factorial n (n-1) ... (n-k+1).
inline double falling(long long n, int k) {
    double r = 1.0;
    for (int i = 0; i < k; ++i) r *= static_cast<double>(n - i);
    return r;
}

}  // namespace bmfluct
