#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace cotparity {

/// One quadratic piece a*t^2 + b*t + c on [lo, hi). The last piece of a
/// link function is closed on the right.
struct QuadPiece {
  double lo, hi;
  double a, b, c;

  double eval(double t) const { return (a * t + b) * t + c; }
  double deriv(double t) const { return 2.0 * a * t + b; }
};

/// Piecewise-quadratic feedforward nonlinearity mapping [-1,1] -> [-1,1],
/// with phi(0) = -1, phi(+-1) = 1 and phi'(0) = phi'(+-1) = 0, so that
/// phi((a+b)/2) = a*b for a,b in {-1,+1}: averaging two tokens computes
/// their 2-parity.
class LinkFunction {
public:
  explicit LinkFunction(std::vector<QuadPiece> pieces) : pieces_(std::move(pieces)) {
    if (pieces_.empty()) throw std::invalid_argument("link function needs at least one piece");
    validate();
  }

  /// The Appendix-style default: -4t^2-8t-3 on [-1,-0.5), 4t^2-1 on
  /// [-0.5,0.5), -4t^2+8t-3 on [0.5,1].
  static LinkFunction piecewise_quadratic_default() {
    return LinkFunction({{-1.0, -0.5, -4.0, -8.0, -3.0},
                         {-0.5, 0.5, 4.0, 0.0, -1.0},
                         {0.5, 1.0, -4.0, 8.0, -3.0}});
  }

  double eval(double t) const { return piece_at(t).eval(t); }
  double deriv(double t) const { return piece_at(t).deriv(t); }

  /// Curvature constant c in phi(t) = -1 + c t^2 + O(t^4) near zero,
  /// read off the piece containing 0.
  double curvature() const { return piece_at(0.0).a; }

  /// sup over [-1,1] of |phi'|, maximised exactly per piece (the extrema
  /// of a linear derivative sit at interval endpoints).
  double sup_deriv() const {
    double best = 0.0;
    for (const auto& p : pieces_) {
      best = std::max(best, std::abs(p.deriv(p.lo)));
      best = std::max(best, std::abs(p.deriv(p.hi)));
    }
    return best;
  }

  /// Growth exponent g = log2 ||phi'||_inf + 1/2 controlling the
  /// no-teacher-forcing gradient bound.
  double growth_exponent() const { return std::log2(sup_deriv()) + 0.5; }

  const std::vector<QuadPiece>& pieces() const { return pieces_; }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : pieces_)
      arr.push_back({{"lo", p.lo}, {"hi", p.hi}, {"a", p.a}, {"b", p.b}, {"c", p.c}});
    return arr;
  }

  static LinkFunction from_json(const nlohmann::json& arr) {
    std::vector<QuadPiece> pieces;
    for (const auto& e : arr)
      pieces.push_back({e.at("lo").get<double>(), e.at("hi").get<double>(),
                        e.at("a").get<double>(), e.at("b").get<double>(),
                        e.at("c").get<double>()});
    return LinkFunction(std::move(pieces));
  }

private:
  const QuadPiece& piece_at(double t) const {
    if (t < -1.0 || t > 1.0) throw std::domain_error("link function argument outside [-1,1]");
    for (const auto& p : pieces_) {
      if (t >= p.lo && t < p.hi) return p;
    }
    return pieces_.back();  // t == right endpoint of the final piece
  }

  void validate() const {
    constexpr double tol = 1e-12;
    if (pieces_.front().lo != -1.0 || pieces_.back().hi != 1.0)
      throw std::invalid_argument("pieces must cover [-1,1]");
    for (std::size_t i = 0; i + 1 < pieces_.size(); ++i) {
      const auto& a = pieces_[i];
      const auto& b = pieces_[i + 1];
      if (a.hi != b.lo) throw std::invalid_argument("pieces must be contiguous");
      if (std::abs(a.eval(a.hi) - b.eval(b.lo)) > tol)
        throw std::invalid_argument("pieces must join continuously");
      if (std::abs(a.deriv(a.hi) - b.deriv(b.lo)) > tol)
        throw std::invalid_argument("pieces must join with matching derivative");
    }
    auto check = [&](bool cond, const char* what) {
      if (!cond) throw std::invalid_argument(std::string("link function invariant failed: ") + what);
    };
    check(std::abs(eval(0.0) + 1.0) <= tol, "phi(0) = -1");
    check(std::abs(eval(1.0) - 1.0) <= tol, "phi(1) = 1");
    check(std::abs(eval(-1.0) - 1.0) <= tol, "phi(-1) = 1");
    check(std::abs(deriv(0.0)) <= tol, "phi'(0) = 0");
    check(std::abs(deriv(1.0)) <= tol, "phi'(1) = 0");
    check(std::abs(deriv(-1.0)) <= tol, "phi'(-1) = 0");
    for (int i = 0; i <= 400; ++i) {
      const double t = -1.0 + i / 200.0;
      check(std::abs(eval(t) - eval(-t)) <= tol, "phi symmetric");
      check(eval(t) >= -1.0 - tol && eval(t) <= 1.0 + tol, "phi maps into [-1,1]");
    }
  }

  std::vector<QuadPiece> pieces_;
};

}  // namespace cotparity
