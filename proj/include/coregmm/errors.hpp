#pragma once

#include <stdexcept>
#include <string>

namespace coregmm {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class DimensionMismatch : public Error {
 public:
  explicit DimensionMismatch(const std::string& what) : Error(what) {}
};

class EmptySet : public Error {
 public:
  explicit EmptySet(const std::string& what) : Error(what) {}
};

class NotPositiveDefinite : public Error {
 public:
  explicit NotPositiveDefinite(const std::string& what) : Error(what) {}
};

class NonPositiveWeight : public Error {
 public:
  explicit NonPositiveWeight(const std::string& what) : Error(what) {}
};

class GridBoundExceeded : public Error {
 public:
  explicit GridBoundExceeded(const std::string& what) : Error(what) {}
};

class RecursionBudgetExceeded : public Error {
 public:
  explicit RecursionBudgetExceeded(const std::string& what) : Error(what) {}
};

class DegenerateQuery : public Error {
 public:
  explicit DegenerateQuery(const std::string& what) : Error(what) {}
};

class InvalidRange : public Error {
 public:
  explicit InvalidRange(const std::string& what) : Error(what) {}
};

class SchemeFailure : public Error {
 public:
  explicit SchemeFailure(const std::string& what) : Error(what) {}
};

class EmptyInput : public Error {
 public:
  explicit EmptyInput(const std::string& what) : Error(what) {}
};

class ZeroTotalSensitivity : public Error {
 public:
  explicit ZeroTotalSensitivity(const std::string& what) : Error(what) {}
};

class OutOfDomain : public Error {
 public:
  explicit OutOfDomain(const std::string& what) : Error(what) {}
};

class InnerSchemeFailure : public Error {
 public:
  explicit InnerSchemeFailure(const std::string& what) : Error(what) {}
};

class EmptyStream : public Error {
 public:
  explicit EmptyStream(const std::string& what) : Error(what) {}
};

class TooFewPoints : public Error {
 public:
  explicit TooFewPoints(const std::string& what) : Error(what) {}
};

class DegenerateComponent : public Error {
 public:
  explicit DegenerateComponent(const std::string& what) : Error(what) {}
};

class IoFailure : public Error {
 public:
  explicit IoFailure(const std::string& what) : Error(what) {}
};

class ParseFailure : public Error {
 public:
  explicit ParseFailure(const std::string& what) : Error(what) {}
};

}  // namespace coregmm
