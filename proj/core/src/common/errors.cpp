#include "hamil/common/errors.hpp"

namespace hamil {

void throw_contract(const std::string& what) { throw ContractViolation(what); }

}  // namespace hamil
