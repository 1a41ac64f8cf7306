#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace textdemand {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input violates a documented precondition (bad dimensions, unknown column, ...).
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// Every word of a corpus fell below the vocabulary floor.
class DegenerateCorpus : public Error {
public:
    using Error::Error;
};

/// An iterative solver hit its iteration cap. `indices` names the offending
/// coordinates (words for the sentiment model, singular triplets for the SVD).
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, std::vector<std::size_t> indices,
                     std::vector<double> residuals = {})
        : Error(what), indices(std::move(indices)), residuals(std::move(residuals)) {}

    std::vector<std::size_t> indices;
    std::vector<double> residuals;
};

/// Working Hessian or design matrix is singular; `columns` lists the
/// regressors implicated.
class CollinearityError : public Error {
public:
    CollinearityError(const std::string& what, std::vector<std::string> columns)
        : Error(what), columns(std::move(columns)) {}

    std::vector<std::string> columns;
};

/// A coefficient diverges (perfect separation in a count model).
class SeparationError : public Error {
public:
    SeparationError(const std::string& what, std::string column)
        : Error(what), column(std::move(column)) {}

    std::string column;
};

/// An upstream artifact is missing or its hash does not match.
class StaleDependency : public Error {
public:
    using Error::Error;
};

}  // namespace textdemand
