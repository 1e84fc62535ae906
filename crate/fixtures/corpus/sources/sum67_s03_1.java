public int sum67(int[] nums) {
    int sum = 0;
    boolean skipping = false;
    for (int n : nums) {
        if (skipping) {
            if (n == 7) skipping = false;
        } else if (n == 6) {
            skipping = true;
        } else {
            sum += n;
        }
    }
    return sum;
}
