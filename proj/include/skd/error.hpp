#pragma once

#include <stdexcept>
#include <string>

namespace skd {

enum class ErrorKind {
  kConfig,         // invalid parameters or flags
  kIo,             // unreadable/unwritable file
  kFormat,         // malformed corpus, score file or checkpoint
  kInfeasible,     // CTC target cannot be emitted in the available frames
  kTraining,       // nothing trainable
  kVocabMismatch,  // checkpoint and corpus vocabularies disagree
  kChecksum,       // input differs from a recorded manifest
  kMissingInput,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace skd
