#include "gpsgen/tensor.hpp"

#include <sstream>

namespace gpsgen {

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

}  // namespace gpsgen
