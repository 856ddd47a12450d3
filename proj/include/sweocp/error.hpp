#ifndef SWEOCP_ERROR_HPP
#define SWEOCP_ERROR_HPP

#include <stdexcept>
#include <string>

namespace sweocp {

/// Base of every error raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error
{
public:
  using Error::Error;
};

class DimensionError : public Error
{
public:
  using Error::Error;
};

class IndexError : public Error
{
public:
  using Error::Error;
};

class SolverError : public Error
{
public:
  using Error::Error;
};

/// Newton iteration ran out of iterations. Carries the last residual norm.
class NonConvergenceError : public SolverError
{
public:
  NonConvergenceError(const std::string & what, double last_residual)
      : SolverError(what), last_residual_(last_residual)
  {}

  double last_residual() const noexcept { return last_residual_; }

private:
  double last_residual_;
};

class FactorizationError : public SolverError
{
public:
  using SolverError::SolverError;
};

/// POD could not retain the requested number of modes.
class BasisDeficiencyError : public Error
{
public:
  BasisDeficiencyError(const std::string & what, int retainable)
      : Error(what), retainable_(retainable)
  {}

  int retainable() const noexcept { return retainable_; }

private:
  int retainable_;
};

class PipelineError : public Error
{
public:
  using Error::Error;
};

class MissingArtifactError : public PipelineError
{
public:
  using PipelineError::PipelineError;
};

class IoError : public Error
{
public:
  using Error::Error;
};

}  // namespace sweocp

#endif  // SWEOCP_ERROR_HPP
