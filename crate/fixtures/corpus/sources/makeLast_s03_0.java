public int[] makeLast(int[] nums) {
    int[] out = new int[nums.length * 2];
    out[0] = nums[nums.length - 1];
    return out;
}
