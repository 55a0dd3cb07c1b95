#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tfopt/errors.hpp"
#include "tfopt/rng.hpp"

namespace tfopt {

using Vector = std::vector<double>;

class DenseMatrix {
public:
    DenseMatrix() = default;

    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw ShapeError("DenseMatrix: data length " + std::to_string(data_.size()) +
                             " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }

    DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ ? rows.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) throw ShapeError("DenseMatrix: ragged initializer");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static DenseMatrix identity(std::size_t n) {
        DenseMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static DenseMatrix diag(const Vector& v) {
        DenseMatrix m(v.size(), v.size());
        for (std::size_t i = 0; i < v.size(); ++i) m(i, i) = v[i];
        return m;
    }

    static DenseMatrix column(const Vector& v) { return DenseMatrix(v.size(), 1, v); }
    static DenseMatrix row(const Vector& v) { return DenseMatrix(1, v.size(), v); }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool square() const { return rows_ == cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    double* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
    const double* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    DenseMatrix transpose() const {
        DenseMatrix t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    DenseMatrix block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const {
        if (r0 + nr > rows_ || c0 + nc > cols_) throw ShapeError("DenseMatrix::block out of range");
        DenseMatrix b(nr, nc);
        for (std::size_t i = 0; i < nr; ++i)
            for (std::size_t j = 0; j < nc; ++j) b(i, j) = (*this)(r0 + i, c0 + j);
        return b;
    }

    void set_block(std::size_t r0, std::size_t c0, const DenseMatrix& b) {
        if (r0 + b.rows_ > rows_ || c0 + b.cols_ > cols_)
            throw ShapeError("DenseMatrix::set_block out of range");
        for (std::size_t i = 0; i < b.rows_; ++i)
            for (std::size_t j = 0; j < b.cols_; ++j) (*this)(r0 + i, c0 + j) = b(i, j);
    }

    Vector col(std::size_t j) const {
        Vector v(rows_);
        for (std::size_t i = 0; i < rows_; ++i) v[i] = (*this)(i, j);
        return v;
    }

    DenseMatrix& operator+=(const DenseMatrix& o) {
        check_same(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    DenseMatrix& operator-=(const DenseMatrix& o) {
        check_same(o, "-=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }

    DenseMatrix& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    friend DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) { return a += b; }
    friend DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) { return a -= b; }
    friend DenseMatrix operator*(double s, DenseMatrix a) { return a *= s; }
    friend DenseMatrix operator*(DenseMatrix a, double s) { return a *= s; }

    friend bool operator==(const DenseMatrix& a, const DenseMatrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    void check_same(const DenseMatrix& o, const char* op) const {
        if (rows_ != o.rows_ || cols_ != o.cols_)
            throw ShapeError(std::string("DenseMatrix ") + op + ": shape mismatch");
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline std::string shape_str(const DenseMatrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_finite(const DenseMatrix& m, const char* where) {
    if (!m.all_finite()) throw NumericError(std::string(where) + ": non-finite entry");
}

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: " + shape_str(a) + " times " + shape_str(b));
    DenseMatrix c(a.rows(), b.cols());
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c.row_ptr(i);
        const double* ai = a.row_ptr(i);
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            if (aip == 0.0) continue;
            const double* bp = b.row_ptr(p);
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
    require_finite(c, "matmul");
    return c;
}

inline Vector matvec(const DenseMatrix& a, const Vector& x) {
    if (a.cols() != x.size())
        throw ShapeError("matvec: " + shape_str(a) + " times vector of length " +
                         std::to_string(x.size()));
    Vector y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.row_ptr(i);
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += ai[j] * x[j];
        y[i] = s;
    }
    return y;
}

inline double dot(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Vector& v) { return std::sqrt(dot(v, v)); }

inline Vector axpy(double alpha, const Vector& x, Vector y) {
    if (x.size() != y.size()) throw ShapeError("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
    return y;
}

inline double frobenius_norm(const DenseMatrix& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return std::sqrt(s);
}

inline double max_abs(const DenseMatrix& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

// Power iteration on a^T a. The returned value is the square root of the
// largest Rayleigh quotient seen, so it never exceeds sigma_max and never
// decreases with more iterations.
inline double spectral_norm_est(const DenseMatrix& a, int iters, std::uint64_t seed) {
    if (iters < 1) throw DomainError("spectral_norm_est: iters must be >= 1");
    if (max_abs(a) == 0.0) return 0.0;
    Rng rng(seed);
    Vector v(a.cols());
    for (double& x : v) x = rng.normal();
    double nv = norm2(v);
    for (double& x : v) x /= nv;
    double best = 0.0;
    for (int it = 0; it < iters; ++it) {
        const Vector av = matvec(a, v);
        best = std::max(best, dot(av, av));  // Rayleigh quotient of a^T a at unit v
        Vector w(a.cols(), 0.0);
        for (std::size_t i = 0; i < a.rows(); ++i) {
            const double* ai = a.row_ptr(i);
            for (std::size_t j = 0; j < a.cols(); ++j) w[j] += ai[j] * av[i];
        }
        const double nw = norm2(w);
        if (nw == 0.0) break;
        for (std::size_t j = 0; j < w.size(); ++j) v[j] = w[j] / nw;
    }
    return std::sqrt(best);
}

inline void require_symmetric(const DenseMatrix& a, double rel_tol, const char* where) {
    if (!a.square()) throw ShapeError(std::string(where) + ": matrix not square " + shape_str(a));
    const double scale = std::max(max_abs(a), 1e-300);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j)
            if (std::abs(a(i, j) - a(j, i)) > rel_tol * scale)
                throw SymmetryError(std::string(where) + ": asymmetric at (" + std::to_string(i) +
                                    "," + std::to_string(j) + ")");
}

// Lower Cholesky factor of an SPD matrix.
inline DenseMatrix cholesky(const DenseMatrix& a) {
    require_symmetric(a, 1e-12, "cholesky");
    const std::size_t n = a.rows();
    DenseMatrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = a(j, j);
        for (std::size_t k = 0; k < j; ++k) s -= l(j, k) * l(j, k);
        if (!(s > 0.0))
            throw DefinitenessError("cholesky: non-positive pivot at " + std::to_string(j));
        const double ljj = std::sqrt(s);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double t = a(i, j);
            for (std::size_t k = 0; k < j; ++k) t -= l(i, k) * l(j, k);
            l(i, j) = t / ljj;
        }
    }
    return l;
}

inline DenseMatrix solve_spd(const DenseMatrix& a, const DenseMatrix& b) {
    if (b.rows() != a.rows()) throw ShapeError("solve_spd: rhs " + shape_str(b) + " vs " + shape_str(a));
    const DenseMatrix l = cholesky(a);
    const std::size_t n = a.rows();
    DenseMatrix x = b;
    for (std::size_t c = 0; c < b.cols(); ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = x(i, c);
            for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
            x(i, c) = s / l(i, i);
        }
        for (std::size_t i = n; i-- > 0;) {
            double s = x(i, c);
            for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * x(k, c);
            x(i, c) = s / l(i, i);
        }
    }
    require_finite(x, "solve_spd");
    return x;
}

inline Vector solve_spd(const DenseMatrix& a, const Vector& b) {
    return solve_spd(a, DenseMatrix::column(b)).data();
}

// Orthonormalises the columns of a square Gaussian matrix (modified Gram-Schmidt).
inline DenseMatrix random_orthogonal(std::size_t n, Rng& rng) {
    DenseMatrix q(n, n);
    for (double& v : q.data()) v = rng.normal();
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < j; ++k) {
            double r = 0.0;
            for (std::size_t i = 0; i < n; ++i) r += q(i, k) * q(i, j);
            for (std::size_t i = 0; i < n; ++i) q(i, j) -= r * q(i, k);
        }
        double nrm = 0.0;
        for (std::size_t i = 0; i < n; ++i) nrm += q(i, j) * q(i, j);
        nrm = std::sqrt(nrm);
        for (std::size_t i = 0; i < n; ++i) q(i, j) /= nrm;
    }
    return q;
}

// --- CSV ---

inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw IoError("parse_double: bad number '" + std::string(s) + "'");
    return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

inline void write_csv(std::ostream& os, const DenseMatrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) os << ',';
            os << format_double(m(i, j));
        }
        os << '\n';
    }
}

inline DenseMatrix read_csv(std::istream& is) {
    std::vector<double> data;
    std::size_t rows = 0, cols = 0;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line == "\r") continue;
        const auto fields = split(line, ',');
        if (rows == 0) cols = fields.size();
        else if (fields.size() != cols)
            throw IoError("read_csv: row " + std::to_string(rows) + " has " +
                          std::to_string(fields.size()) + " fields, expected " + std::to_string(cols));
        for (auto f : fields) data.push_back(parse_double(f));
        ++rows;
    }
    if (rows == 0) throw IoError("read_csv: empty matrix");
    return DenseMatrix(rows, cols, std::move(data));
}

inline void save_csv(const std::string& path, const DenseMatrix& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    write_csv(os, m);
    if (!os) throw IoError("write failed: " + path);
}

inline DenseMatrix load_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    return read_csv(is);
}

}  // namespace tfopt
