#pragma once

#include <stdexcept>
#include <string>

namespace stocon {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class InvalidMatrix : public Error {
public:
    explicit InvalidMatrix(const std::string& what) : Error(what) {}
};

class NotPositiveDefinite : public Error {
public:
    explicit NotPositiveDefinite(const std::string& what) : Error(what) {}
};

class DimensionMismatch : public Error {
public:
    explicit DimensionMismatch(const std::string& what) : Error(what) {}
};

class ModeOutOfRange : public Error {
public:
    explicit ModeOutOfRange(const std::string& what) : Error(what) {}
};

class ModeMismatch : public Error {
public:
    explicit ModeMismatch(const std::string& what) : Error(what) {}
};

class NonFiniteSample : public Error {
public:
    explicit NonFiniteSample(const std::string& what) : Error(what) {}
};

/// Trajectory left the finite range at a known step.
class Diverged : public Error {
public:
    Diverged(int step_, const std::string& what) : Error(what), step(step_) {}
    int step;
};

class UnknownSystem : public Error {
public:
    explicit UnknownSystem(const std::string& what) : Error(what) {}
};

class QuadratureUnsupported : public Error {
public:
    explicit QuadratureUnsupported(const std::string& what) : Error(what) {}
};

class UnsupportedMetric : public Error {
public:
    explicit UnsupportedMetric(const std::string& what) : Error(what) {}
};

class UnsupportedStructure : public Error {
public:
    explicit UnsupportedStructure(const std::string& what) : Error(what) {}
};

class InvalidRate : public Error {
public:
    explicit InvalidRate(const std::string& what) : Error(what) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error(what) {}
};

/// Numerical failure inside the SDP solver (singular Newton system, line
/// search collapse).  Distinct from Infeasible and from MaxIterations.
class SolverBreakdown : public Error {
public:
    explicit SolverBreakdown(const std::string& what) : Error(what) {}
};

/// Synthesis LMI family infeasible at the requested rate.
class SynthesisInfeasible : public Error {
public:
    SynthesisInfeasible(double lambda2_, const std::string& what)
        : Error(what), lambda2(lambda2_) {}
    double lambda2;
};

/// Solver hit its iteration cap before the margin/gap test resolved.
class SolverStalled : public Error {
public:
    explicit SolverStalled(const std::string& what) : Error(what) {}
};

class DegeneratePairs : public Error {
public:
    explicit DegeneratePairs(const std::string& what) : Error(what) {}
};

/// Malformed or inconsistent run configuration.  Carries the source line and
/// column when the failure is syntactic; both are 0 for semantic failures,
/// whose messages name the offending field instead.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what, int line_ = 0, int column_ = 0)
        : Error(what), line(line_), column(column_) {}
    int line;
    int column;
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(what) {}
};

} // namespace stocon
