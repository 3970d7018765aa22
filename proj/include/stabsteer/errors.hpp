#ifndef STABSTEER_ERRORS_HPP
#define STABSTEER_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace stabsteer {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
    ok = 0,
    usage = 2,
    ingest = 3,
    numerical = 4,
    internal = 5,
};

/// Base class of every error raised by the library. Each subclass carries
/// the exit code the CLI maps it to.
class Error : public std::runtime_error {
public:
    Error(const std::string& what, ExitCode code) : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

#define STABSTEER_DEFINE_ERROR(Name, Code)                                           \
    class Name : public Error {                                                      \
    public:                                                                          \
        explicit Name(const std::string& what) : Error(#Name ": " + what, Code) {}   \
    }

STABSTEER_DEFINE_ERROR(NormalizationError, ExitCode::numerical);
STABSTEER_DEFINE_ERROR(RankError, ExitCode::numerical);
STABSTEER_DEFINE_ERROR(EmptySetError, ExitCode::numerical);
STABSTEER_DEFINE_ERROR(DimensionError, ExitCode::ingest);
STABSTEER_DEFINE_ERROR(ParseError, ExitCode::ingest);
STABSTEER_DEFINE_ERROR(IngestError, ExitCode::ingest);
STABSTEER_DEFINE_ERROR(DuplicateRecordError, ExitCode::ingest);
STABSTEER_DEFINE_ERROR(PairingError, ExitCode::ingest);
STABSTEER_DEFINE_ERROR(SamplingError, ExitCode::ingest);
STABSTEER_DEFINE_ERROR(FoldError, ExitCode::ingest);
STABSTEER_DEFINE_ERROR(ConfigError, ExitCode::usage);
STABSTEER_DEFINE_ERROR(UsageError, ExitCode::usage);

#undef STABSTEER_DEFINE_ERROR

} // namespace stabsteer

#endif
