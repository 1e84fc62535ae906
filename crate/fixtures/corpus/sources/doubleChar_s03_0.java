public String doubleChar(String str) {
    return str + str;
}
