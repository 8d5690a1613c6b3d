#pragma once

#include <stdexcept>
#include <string>

namespace mpu {

enum class ErrCode {
    // isa
    UndefinedOpcode,
    ModeNotAllowed,
    // assembler
    UnknownMnemonic,
    UndefinedLabel,
    DuplicateLabel,
    ProgramTooLarge,
    // object store
    StoreFull,
    BadAttribute,
    UnknownObject,
    LevelViolation,
    UnknownNode,
    WouldCreateCycle,
    // symptom match
    SchemaMismatch,
    EmptyBank,
    // vm
    OutOfRange,
    UnknownOutcomeCode,
    LearningDisabled,
    StepLimitExceeded,
    // network sim
    NoSuchSubject,
    IncompleteProcedure,
    MaxTicksExceeded,
    // files
    FormatError,
    IoError,
};

const char* err_name(ErrCode code);

class MpuError : public std::runtime_error {
public:
    MpuError(ErrCode code, const std::string& what)
        : std::runtime_error(std::string(err_name(code)) + ": " + what),
          code_(code) {}

    ErrCode code() const { return code_; }

private:
    ErrCode code_;
};

}  // namespace mpu
