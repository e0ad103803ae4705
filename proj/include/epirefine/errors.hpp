#pragma once

#include <stdexcept>
#include <string>

namespace epirefine {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

struct DegeneratePose : Error {
  explicit DegeneratePose(const std::string& msg) : Error(msg) {}
};

struct EpipoleDegenerate : Error {
  explicit EpipoleDegenerate(const std::string& msg) : Error(msg) {}
};

struct InsufficientMatches : Error {
  explicit InsufficientMatches(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace epirefine
