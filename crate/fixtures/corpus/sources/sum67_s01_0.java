public int sum67(int[] nums){
int sum = 0;
if (nums.length == 0){return 0;}
else{for (int i = 0; i < nums.length; i++){
if (nums[i] == 6){
if (nums[i + 1] == 7){i = i + 1;}}
else{sum = sum + nums[i];}}
return sum;}}
