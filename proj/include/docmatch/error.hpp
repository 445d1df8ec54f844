#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace docmatch {

// Machine-parsable failure kinds. The CLI prints the name on stderr.
enum class Errc {
  kIoError,
  kMalformedLine,
  kEmptyDocument,
  kEmptyCorpus,
  kInvalidUtf8,
  kDimensionMismatch,
  kInsufficientSamples,
  kTooManyTokens,
  kMissingEmbedding,
  kSpanOutOfRange,
  kMalformedMarkup,
  kCorpusTooSmall,
  kInsufficientPool,
  kEmptyFilter,
  kEmptyGroup,
  kMissingPilotData,
  kNoResponses,
  kPoolUnavailable,
  kSessionNotFound,
  kSessionComplete,
  kOutstandingQuestion,
  kStaleOrdinal,
  kInvalidChoice,
  kSessionNotReady,
  kUnauthorized,
  kValidation,
  kConfig,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace docmatch
