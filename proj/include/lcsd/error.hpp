#pragma once

#include <stdexcept>
#include <string>

namespace lcsd {

// Violated precondition of a public operation (bad shapes, out-of-range
// arguments). Messages name the offending values.
class ContractViolation : public std::invalid_argument {
   public:
    explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

class EmptyInstruction : public std::invalid_argument {
   public:
    explicit EmptyInstruction(const std::string& what) : std::invalid_argument(what) {}
};

class NoPendingSubtask : public std::logic_error {
   public:
    explicit NoPendingSubtask(const std::string& what) : std::logic_error(what) {}
};

class DatasetError : public std::runtime_error {
   public:
    explicit DatasetError(const std::string& what) : std::runtime_error(what) {}
};

class VersionError : public std::runtime_error {
   public:
    explicit VersionError(const std::string& what) : std::runtime_error(what) {}
};

class CorruptCheckpoint : public std::runtime_error {
   public:
    explicit CorruptCheckpoint(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ContractViolation(what);
}

}  // namespace lcsd
