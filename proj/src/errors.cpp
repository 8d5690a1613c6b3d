#include "mpu/errors.hpp"

namespace mpu {

const char* err_name(ErrCode code) {
    switch (code) {
        case ErrCode::UndefinedOpcode: return "UndefinedOpcode";
        case ErrCode::ModeNotAllowed: return "ModeNotAllowed";
        case ErrCode::UnknownMnemonic: return "UnknownMnemonic";
        case ErrCode::UndefinedLabel: return "UndefinedLabel";
        case ErrCode::DuplicateLabel: return "DuplicateLabel";
        case ErrCode::ProgramTooLarge: return "ProgramTooLarge";
        case ErrCode::StoreFull: return "StoreFull";
        case ErrCode::BadAttribute: return "BadAttribute";
        case ErrCode::UnknownObject: return "UnknownObject";
        case ErrCode::LevelViolation: return "LevelViolation";
        case ErrCode::UnknownNode: return "UnknownNode";
        case ErrCode::WouldCreateCycle: return "WouldCreateCycle";
        case ErrCode::SchemaMismatch: return "SchemaMismatch";
        case ErrCode::EmptyBank: return "EmptyBank";
        case ErrCode::OutOfRange: return "OutOfRange";
        case ErrCode::UnknownOutcomeCode: return "UnknownOutcomeCode";
        case ErrCode::LearningDisabled: return "LearningDisabled";
        case ErrCode::StepLimitExceeded: return "StepLimitExceeded";
        case ErrCode::NoSuchSubject: return "NoSuchSubject";
        case ErrCode::IncompleteProcedure: return "IncompleteProcedure";
        case ErrCode::MaxTicksExceeded: return "MaxTicksExceeded";
        case ErrCode::FormatError: return "FormatError";
        case ErrCode::IoError: return "IoError";
    }
    return "UnknownError";
}

}  // namespace mpu
