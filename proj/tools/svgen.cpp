#include <iostream>

int main() {
    std::cout << "svgen: placeholder\n";
    return 0;
}
