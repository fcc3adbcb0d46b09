#pragma once

#include <string>

#include "mlr/admm.hpp"
#include "mlr/encoder.hpp"
#include "mlr/geometry.hpp"
#include "mlr/memoclient.hpp"
#include "mlr/scalerun.hpp"

namespace mlr {

/// Flat key=value run configuration shared by the CLI and the C API. Files
/// use one `key = value` pair per line with '#' comments; unknown keys are
/// rejected so typos fail loudly.
struct RunConfig {
  // acquisition geometry
  std::int64_t n1 = 32, n0 = 32, n2 = 32;
  std::int64_t n_theta = 32, h = 32, w = 32;
  double phi = 0.5235987755982988;  // pi/6 tilt by default

  AdmmConfig admm;
  EncoderConfig encoder;
  EngineConfig engine;
  MemoClientConfig memo;
  std::string encoder_weights;  // optional path to trained cnn weights

  /// Applies one key=value pair; throws std::invalid_argument on unknown
  /// keys or unparseable values.
  void set(const std::string& key, const std::string& value);

  /// Parses a config file. Throws std::runtime_error on I/O failure and
  /// std::invalid_argument on bad content (with a line number).
  static RunConfig from_file(const std::string& path);

  /// Parses config text, e.g. an already-loaded file.
  static RunConfig from_text(const std::string& text);

  Geometry make_geometry() const;

  /// Cross-field validation (geometry warnings are returned, hard errors
  /// throw std::invalid_argument).
  void validate() const;

  std::string str() const;  // canonical key=value dump, one pair per line
};

/// Splits "key=value" (first '='), trimming ASCII whitespace around both.
std::pair<std::string, std::string> split_key_value(const std::string& line);

}  // namespace mlr
