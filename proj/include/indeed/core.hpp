#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>
#include <vector>

namespace indeed {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Thrown when a value object would violate its invariants.
struct InvalidPosterior : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Thrown on malformed files (checkpoints, images, configs).
struct FileFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Thrown when an iterative solver produces non-finite values.
struct SolverDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Image as a stack of channel matrices (h x w each), values nominally in [0,1].
struct ImageTensor {
    std::vector<Matrix> channels;

    ImageTensor() = default;
    explicit ImageTensor(Matrix single) { channels.push_back(std::move(single)); }

    Eigen::Index height() const { return channels.empty() ? 0 : channels[0].rows(); }
    Eigen::Index width() const { return channels.empty() ? 0 : channels[0].cols(); }
    int num_channels() const { return static_cast<int>(channels.size()); }

    const Matrix& ch(int c) const { return channels.at(static_cast<size_t>(c)); }
    Matrix& ch(int c) { return channels.at(static_cast<size_t>(c)); }

    bool finite() const {
        for (const auto& m : channels)
            if (!m.allFinite()) return false;
        return true;
    }

    void validate_observation() const {
        if (channels.empty()) throw InvalidPosterior("ImageTensor: no channels");
        for (const auto& m : channels) {
            if (m.rows() != height() || m.cols() != width())
                throw InvalidPosterior("ImageTensor: ragged channel shapes");
            if (!m.allFinite()) throw InvalidPosterior("ImageTensor: non-finite entries");
            if (m.minCoeff() < -1e-9 || m.maxCoeff() > 1.0 + 1e-9)
                throw InvalidPosterior("ImageTensor: observation values outside [0,1]");
        }
    }
};

} // namespace indeed
