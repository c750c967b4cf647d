#pragma once

#define ECHOFLOW_VERSION_MAJOR 0
#define ECHOFLOW_VERSION_MINOR 1
#define ECHOFLOW_VERSION_PATCH 0
#define ECHOFLOW_VERSION "0.1.0"
