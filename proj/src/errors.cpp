#include "blendgan/errors.hpp"
