#include "docmatch/error.hpp"

namespace docmatch {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::kIoError: return "IoError";
    case Errc::kMalformedLine: return "MalformedLine";
    case Errc::kEmptyDocument: return "EmptyDocument";
    case Errc::kEmptyCorpus: return "EmptyCorpus";
    case Errc::kInvalidUtf8: return "InvalidUtf8";
    case Errc::kDimensionMismatch: return "DimensionMismatch";
    case Errc::kInsufficientSamples: return "InsufficientSamples";
    case Errc::kTooManyTokens: return "TooManyTokens";
    case Errc::kMissingEmbedding: return "MissingEmbedding";
    case Errc::kSpanOutOfRange: return "SpanOutOfRange";
    case Errc::kMalformedMarkup: return "MalformedMarkup";
    case Errc::kCorpusTooSmall: return "CorpusTooSmall";
    case Errc::kInsufficientPool: return "InsufficientPool";
    case Errc::kEmptyFilter: return "EmptyFilter";
    case Errc::kEmptyGroup: return "EmptyGroup";
    case Errc::kMissingPilotData: return "MissingPilotData";
    case Errc::kNoResponses: return "NoResponses";
    case Errc::kPoolUnavailable: return "PoolUnavailable";
    case Errc::kSessionNotFound: return "SessionNotFound";
    case Errc::kSessionComplete: return "SessionComplete";
    case Errc::kOutstandingQuestion: return "OutstandingQuestion";
    case Errc::kStaleOrdinal: return "StaleOrdinal";
    case Errc::kInvalidChoice: return "InvalidChoice";
    case Errc::kSessionNotReady: return "SessionNotReady";
    case Errc::kUnauthorized: return "Unauthorized";
    case Errc::kValidation: return "ValidationError";
    case Errc::kConfig: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace docmatch
