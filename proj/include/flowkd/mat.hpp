#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "flowkd/errors.hpp"

namespace flowkd {

// Dense row-major matrix. Plain value math only; autodiff lives in tensor.hpp.
template <class T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> v;

    Mat() = default;
    Mat(int r, int c, T fill = T(0)) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}
    Mat(int r, int c, std::vector<T> data) : rows(r), cols(c), v(std::move(data)) {
        if (v.size() != static_cast<size_t>(r) * c)
            throw std::invalid_argument("Mat: data size does not match rows*cols");
    }

    T& at(int i, int j) { return v[static_cast<size_t>(i) * cols + j]; }
    const T& at(int i, int j) const { return v[static_cast<size_t>(i) * cols + j]; }

    const T* row(int i) const { return v.data() + static_cast<size_t>(i) * cols; }
    T* row(int i) { return v.data() + static_cast<size_t>(i) * cols; }

    bool all_finite() const {
        for (T x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }
};

template <class T>
void ensure_finite(const Mat<T>& m, const std::string& what) {
    if (!m.all_finite()) throw NumericError("non-finite values in " + what);
}

}  // namespace flowkd
