#pragma once

#include <stdexcept>
#include <string>

namespace bayesvla {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct PoseError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct GenerationError : Error {
  using Error::Error;
};

struct ContractError : Error {
  using Error::Error;
};

}  // namespace bayesvla
