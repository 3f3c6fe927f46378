#include "attriq/core.hpp"

namespace attriq {

std::string_view ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kNonFiniteInput: return "NonFiniteInput";
    case ErrorKind::kClassOutOfRange: return "ClassOutOfRange";
    case ErrorKind::kNotDifferentiable: return "NotDifferentiable";
    case ErrorKind::kLayerNotConvolutional: return "LayerNotConvolutional";
    case ErrorKind::kTooManyFeatures: return "TooManyFeatures";
    case ErrorKind::kSingularSystem: return "SingularSystem";
    case ErrorKind::kInvalidArgument: return "InvalidArgument";
    case ErrorKind::kPatchLargerThanImage: return "PatchLargerThanImage";
    case ErrorKind::kEmptyDataset: return "EmptyDataset";
    case ErrorKind::kParseError: return "ParseError";
    case ErrorKind::kRaggedRow: return "RaggedRow";
    case ErrorKind::kNonNumericCell: return "NonNumericCell";
    case ErrorKind::kBadMagic: return "BadMagic";
    case ErrorKind::kUnsupportedDtype: return "UnsupportedDtype";
    case ErrorKind::kFortranOrderUnsupported: return "FortranOrderUnsupported";
    case ErrorKind::kSchemaViolation: return "SchemaViolation";
    case ErrorKind::kIo: return "IoError";
    case ErrorKind::kConfig: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace attriq
