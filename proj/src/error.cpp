#include "fairehr/error.hpp"

namespace fairehr {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::kDimension:
    return "dimension";
  case ErrorKind::kDomain:
    return "domain";
  case ErrorKind::kContract:
    return "contract";
  case ErrorKind::kConfig:
    return "config";
  case ErrorKind::kSchema:
    return "schema";
  case ErrorKind::kParse:
    return "parse";
  case ErrorKind::kIngestion:
    return "ingestion";
  case ErrorKind::kImputation:
    return "imputation";
  case ErrorKind::kMetric:
    return "metric";
  case ErrorKind::kTraining:
    return "training";
  case ErrorKind::kPipeline:
    return "pipeline";
  case ErrorKind::kIo:
    return "io";
  }
  return "unknown";
}

} // namespace fairehr
