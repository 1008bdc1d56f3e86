#include "fixtures.hpp"

#include <sstream>

namespace dbias::testing {

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

}  // namespace dbias::testing
