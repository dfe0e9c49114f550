#ifndef NNMR_ERROR_HPP_
#define NNMR_ERROR_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nnmr {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

/// Array or parameter shapes disagree with the network configuration.
class ShapeError : public Error {
public:
	using Error::Error;
};

/// Data that cannot be used (too few rows, non-finite entries, bad indices).
class InputError : public Error {
public:
	using Error::Error;
};

/// Hyperparameters outside their admissible range.
class ConfigError : public Error {
public:
	using Error::Error;
};

/// Training produced a non-finite objective.
class DivergenceError : public Error {
public:
	DivergenceError(std::size_t iteration, double value) :
			Error("objective became non-finite (" + std::to_string(value) +
					") at iteration " + std::to_string(iteration)),
			iteration_(iteration) { }
	std::size_t iteration() const noexcept { return iteration_; }
private:
	std::size_t iteration_;
};

}

#endif /* NNMR_ERROR_HPP_ */
