#include "mal/error.hpp"

namespace mal {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Config: return "configuration";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Integrity: return "integrity";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Index: return "index";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Graph: return "graph";
    case ErrorKind::Corruption: return "corruption";
    case ErrorKind::Capacity: return "capacity";
    case ErrorKind::DegenerateData: return "degenerate-data";
    case ErrorKind::UndefinedMetric: return "undefined-metric";
    case ErrorKind::Data: return "data";
    case ErrorKind::Dependency: return "stage-dependency";
    case ErrorKind::Staleness: return "staleness";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace mal
