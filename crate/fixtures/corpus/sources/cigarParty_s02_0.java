public boolean cigarParty(int cigars, boolean isWeekend) {
    return cigars >= 40 && cigars <= 60;
}
