#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace poclab {

// Probabilists' Hermite polynomial He_k(z), recurrence He_{k+1} = z He_k - k He_{k-1}.
inline double hermite_eval(int k, double z) {
  if (k < 0 || k > 64) throw std::invalid_argument("hermite_eval: order out of [0, 64]");
  double prev = 1.0;  // He_0
  if (k == 0) return prev;
  double cur = z;  // He_1
  for (int j = 1; j < k; ++j) {
    const double next = z * cur - static_cast<double>(j) * prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

inline double factorial(int k) {
  double f = 1.0;
  for (int j = 2; j <= k; ++j) f *= j;
  return f;
}

// Activation in the probabilists' Hermite basis: sigma(z) = sum_k c_k He_k(z).
struct LinkFunction {
  std::vector<double> coeffs;  // c_0 .. c_K
  int info_exponent = 0;       // k*: first nonzero coefficient
  int degree = 0;              // K
  bool parity_even = false;

  static LinkFunction hermite(std::vector<double> c) {
    if (c.empty() || c.size() > 21)
      throw std::invalid_argument("LinkFunction: need 1..21 Hermite coefficients");
    LinkFunction link;
    link.coeffs = std::move(c);
    int kstar = -1;
    for (std::size_t k = 0; k < link.coeffs.size(); ++k) {
      if (link.coeffs[k] != 0.0) {
        kstar = static_cast<int>(k);
        break;
      }
    }
    if (kstar < 0) throw std::invalid_argument("LinkFunction: all coefficients are zero");
    link.info_exponent = kstar;
    link.degree = static_cast<int>(link.coeffs.size()) - 1;
    link.parity_even = true;
    for (std::size_t k = 1; k < link.coeffs.size(); k += 2)
      if (link.coeffs[k] != 0.0) link.parity_even = false;
    return link;
  }

  static LinkFunction he(int k, double c = 1.0) {
    std::vector<double> coeffs(k + 1, 0.0);
    coeffs[k] = c;
    return hermite(std::move(coeffs));
  }

  double sigma(double z) const {
    double s = 0.0;
    for (int k = 0; k <= degree; ++k)
      if (coeffs[k] != 0.0) s += coeffs[k] * hermite_eval(k, z);
    return s;
  }

  // sigma in the monomial basis, out[j] is the z^j coefficient
  std::vector<double> sigma_monomial() const {
    std::vector<double> out(static_cast<std::size_t>(degree) + 1, 0.0);
    std::vector<double> a{1.0};       // He_0
    std::vector<double> b{0.0, 1.0};  // He_1
    out[0] += coeffs[0];
    if (degree >= 1) out[1] += coeffs[1];
    for (int k = 2; k <= degree; ++k) {
      std::vector<double> next(static_cast<std::size_t>(k) + 1, 0.0);
      for (std::size_t j = 0; j < b.size(); ++j) next[j + 1] = b[j];
      for (std::size_t j = 0; j < a.size(); ++j) next[j] -= (k - 1) * a[j];
      if (coeffs[k] != 0.0)
        for (std::size_t j = 0; j < next.size(); ++j) out[j] += coeffs[k] * next[j];
      a = std::move(b);
      b = std::move(next);
    }
    return out;
  }

  // He_k' = k He_{k-1}
  double dsigma(double z) const {
    double s = 0.0;
    for (int k = 1; k <= degree; ++k)
      if (coeffs[k] != 0.0) s += coeffs[k] * k * hermite_eval(k - 1, z);
    return s;
  }
};

// Polynomial q(z) = sum_k a_k z^k representing a Gaussian pair expectation.
struct PairKernel {
  std::vector<double> q;  // a_0 .. a_n

  double operator()(double z) const {
    double s = 0.0;
    for (std::size_t k = q.size(); k-- > 0;) s = s * z + q[k];
    return s;
  }

  PairKernel derivative() const {
    PairKernel d;
    if (q.size() > 1) {
      d.q.resize(q.size() - 1);
      for (std::size_t k = 1; k < q.size(); ++k) d.q[k - 1] = q[k] * static_cast<double>(k);
    } else {
      d.q = {0.0};
    }
    return d;
  }
};

// E_x sigma(w.x) sigma(v.x) = q_sigma(w.v), with a_k = k! c_k^2.
inline PairKernel pair_kernel_sigma(const LinkFunction& link) {
  PairKernel q;
  q.q.resize(link.coeffs.size());
  for (std::size_t k = 0; k < link.coeffs.size(); ++k)
    q.q[k] = factorial(static_cast<int>(k)) * link.coeffs[k] * link.coeffs[k];
  return q;
}

// E_x sigma'(w.x) sigma'(v.x) = q_{sigma'}(w.v); equals the formal derivative of q_sigma.
inline PairKernel pair_kernel_dsigma(const LinkFunction& link) {
  return pair_kernel_sigma(link).derivative();
}

inline PairKernel pair_kernel_ddsigma(const LinkFunction& link) {
  return pair_kernel_dsigma(link).derivative();
}

// Activation used by the network: closed-form Hermite polynomial, or SoftPlus with
// temperature (smooth ReLU), which has no Hermite closed form and is routed through
// Monte-Carlo / empirical paths only.
struct Activation {
  enum class Kind { Hermite, SoftPlus };

  Kind kind = Kind::Hermite;
  LinkFunction link;   // valid iff kind == Hermite
  double temp = 16.0;  // valid iff kind == SoftPlus

  static Activation hermite(LinkFunction l) {
    Activation a;
    a.kind = Kind::Hermite;
    a.link = std::move(l);
    return a;
  }

  static Activation softplus(double temperature) {
    if (!(temperature > 0)) throw std::invalid_argument("softplus temperature must be > 0");
    Activation a;
    a.kind = Kind::SoftPlus;
    a.temp = temperature;
    return a;
  }

  bool closed_form() const { return kind == Kind::Hermite; }

  double value(double z) const {
    if (kind == Kind::Hermite) return link.sigma(z);
    // (1/t) log(1 + exp(t z)), stable for large |z|.
    const double tz = temp * z;
    if (tz > 30.0) return z + std::log1p(std::exp(-tz)) / temp;
    return std::log1p(std::exp(tz)) / temp;
  }

  double deriv(double z) const {
    if (kind == Kind::Hermite) return link.dsigma(z);
    const double tz = temp * z;
    if (tz > 0) return 1.0 / (1.0 + std::exp(-tz));
    const double e = std::exp(tz);
    return e / (1.0 + e);
  }
};

}  // namespace poclab
